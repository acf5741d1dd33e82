"""
Output directory manager.
Writes JSON, CSV, binary matrices and model bundles, each stamped with
the config hash and seed, plus a manifest that carries the only timestamp.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from factorAug.errors import DataError
from factorAug.matrixio import Matrix, load_bin, save_bin
from factorAug.utils import canonical_json, format_timestamp, sanitize_filename

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
BUNDLE_META_FILE = "meta.json"
CSV_FLOAT_FORMAT = "%.17g"


class ArtifactManager:
    """Manages everything a command writes below its output directory."""

    def __init__(self, output_dir: Union[str, Path], config_hash: str, seed: int):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.seed = seed
        self._written: List[Path] = []

        self._ensure_directory_exists(self.output_dir)

    def _ensure_directory_exists(self, directory: Path) -> None:
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataError(f"Cannot create output directory {directory}: {e}")

    def _target(self, name: str, subdir: Optional[str] = None) -> Path:
        directory = self.output_dir if subdir is None else self.output_dir / sanitize_filename(subdir)
        self._ensure_directory_exists(directory)
        path = directory / sanitize_filename(name)
        self._written.append(path)
        return path

    def stamp(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.seed}

    def write_json(self, name: str, payload: Dict[str, Any], subdir: Optional[str] = None) -> Path:
        """Write a JSON document with sorted keys, stamped with config hash and seed."""
        path = self._target(name, subdir)
        document = dict(payload)
        document.update(self.stamp())
        path.write_text(canonical_json(document) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, name: str, frame: pd.DataFrame, subdir: Optional[str] = None) -> Path:
        """Write a CSV whose first line is a '# config_hash=..., seed=...' comment."""
        path = self._target(name, subdir)
        header = f"# config_hash={self.config_hash}, seed={self.seed}\n"
        body = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        path.write_text(header + body, encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def write_matrix(self, name: str, matrix: Matrix, subdir: Optional[str] = None) -> Path:
        path = self._target(name, subdir)
        save_bin(matrix, path)
        return path

    def write_bundle(self, name: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any],
                     subdir: Optional[str] = None) -> Path:
        """
        Write a model bundle: a directory holding meta.json and one container file per array.

        Vectors are stored as single-column matrices; meta.json records the original shapes.
        Empty arrays get no container file and are restored from their recorded shape.
        """
        bundle = self._target(name, subdir)
        self._ensure_directory_exists(bundle)
        shapes = {}
        for key, value in sorted(arrays.items()):
            value = np.asarray(value, dtype=np.float64)
            shapes[key] = list(value.shape)
            if value.size == 0:
                continue
            save_bin(Matrix(value.reshape(value.shape[0] if value.ndim else 1, -1)),
                     bundle / f"{sanitize_filename(key)}.bin")
        document = {"meta": meta, "shapes": shapes}
        document.update(self.stamp())
        (bundle / BUNDLE_META_FILE).write_text(canonical_json(document) + "\n", encoding="utf-8")
        return bundle

    def write_manifest(self, command: str, extra: Optional[Dict[str, Any]] = None) -> Path:
        """Write manifest.json listing every artifact; the only file with a timestamp."""
        path = self.output_dir / MANIFEST_FILE
        document = {
            "command": command,
            "created_at": format_timestamp(),
            "files": self.list_artifacts(),
        }
        document.update(extra or {})
        document.update(self.stamp())
        path.write_text(canonical_json(document) + "\n", encoding="utf-8")
        return path

    def list_artifacts(self) -> List[str]:
        """Relative paths of the artifacts written so far, sorted."""
        return sorted({str(p.relative_to(self.output_dir)) for p in self._written})


def read_bundle(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Load a bundle written by ArtifactManager.write_bundle."""
    bundle = Path(path)
    meta_path = bundle / BUNDLE_META_FILE
    if not meta_path.exists():
        raise DataError(f"Not a model bundle: {bundle}")
    document = json.loads(meta_path.read_text(encoding="utf-8"))
    arrays = {}
    for key, shape in document["shapes"].items():
        if 0 in shape:
            arrays[key] = np.zeros(shape)
            continue
        data = np.array(load_bin(bundle / f"{sanitize_filename(key)}.bin").data)
        arrays[key] = data.reshape(shape)
    return arrays, document["meta"]
