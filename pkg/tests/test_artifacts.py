"""
Unit tests for the artifact manager.
"""

import json

import numpy as np
import pandas as pd
import pytest

from factorAug.artifacts import ArtifactManager, read_bundle
from factorAug.errors import DataError
from factorAug.matrixio import Matrix, load_bin


class TestArtifactManager:
    """Test ArtifactManager class functionality."""

    @pytest.fixture
    def manager(self, tmp_path):
        """Create an ArtifactManager writing into a temporary directory."""
        return ArtifactManager(tmp_path / "out", "abc123", 7)

    def test_creates_output_directory(self, manager):
        """Test that the output directory exists after construction."""
        assert manager.output_dir.is_dir()

    def test_write_json_stamped(self, manager):
        """Test that JSON documents carry the hash and seed with sorted keys."""
        path = manager.write_json("metrics.json", {"value": np.float64(0.25), "b": 1})
        text = path.read_text()
        document = json.loads(text)
        assert document == {"b": 1, "config_hash": "abc123", "seed": 7, "value": 0.25}
        assert list(document) == sorted(document)

    def test_write_csv_header(self, manager):
        """Test the comment line and full-precision floats."""
        frame = pd.DataFrame({"x": [0.1, 1 / 3], "y": [1, 2]})
        path = manager.write_csv("table.csv", frame)
        lines = path.read_text().splitlines()
        assert lines[0] == "# config_hash=abc123, seed=7"
        assert lines[1] == "x,y"
        back = pd.read_csv(path, comment="#", float_precision="round_trip")
        assert back["x"].tolist() == [0.1, 1 / 3]

    def test_write_matrix(self, manager):
        """Test binary matrix output."""
        m = Matrix(np.arange(6.0).reshape(2, 3))
        path = manager.write_matrix("m.bin", m)
        assert load_bin(path).equals(m)

    def test_bundle_round_trip(self, manager):
        """Test that bundles restore array shapes and metadata."""
        arrays = {"theta": np.array([1.0, 2.0, 3.0]), "W": np.ones((2, 4)), "scalar": np.array(5.0)}
        path = manager.write_bundle("model", arrays, {"kind": "ridge"}, subdir="models")
        restored, meta = read_bundle(path)
        assert meta == {"kind": "ridge"}
        for key, value in arrays.items():
            np.testing.assert_array_equal(restored[key], value)
            assert restored[key].shape == value.shape

    def test_bundle_empty_arrays(self, manager):
        """Test that empty arrays survive a bundle round trip without a container file."""
        arrays = {"none": np.zeros(0), "no_rows": np.zeros((0, 3)), "W": np.ones((2, 2))}
        path = manager.write_bundle("model", arrays, {})
        restored, _ = read_bundle(path)
        assert restored["none"].shape == (0,)
        assert restored["no_rows"].shape == (0, 3)
        np.testing.assert_array_equal(restored["W"], np.ones((2, 2)))
        assert not (path / "none.bin").exists()

    def test_read_bundle_missing_meta(self, tmp_path):
        """Test that a plain directory is not a bundle."""
        with pytest.raises(DataError):
            read_bundle(tmp_path)

    def test_manifest_lists_files(self, manager):
        """Test that the manifest lists everything written, with a timestamp."""
        manager.write_json("a.json", {})
        manager.write_csv("b.csv", pd.DataFrame({"x": [1]}), subdir="tables")
        path = manager.write_manifest("run", {"metric": "err"})
        manifest = json.loads(path.read_text())
        assert manifest["files"] == ["a.json", "tables/b.csv"]
        assert manifest["command"] == "run"
        assert manifest["metric"] == "err"
        assert "created_at" in manifest

    def test_names_are_sanitized(self, manager):
        """Test that unsafe names are cleaned before writing."""
        path = manager.write_json("bad:name?.json", {})
        assert path.name == "badname.json"
