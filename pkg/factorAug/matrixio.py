"""
Dense matrix container and its I/O: CSV loading, the binary container,
standardization, frequency filtering and labeled panel data.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from factorAug.constants import BIN_HEADER_SIZE, BIN_MAGIC
from factorAug.errors import DataError

logger = logging.getLogger(__name__)

PANEL_ID_COLUMNS = ("asset_id", "date", "y")


@dataclass(frozen=True, eq=False)
class Matrix:
    """Dense, finite, read-only n x p matrix with optional column names."""

    data: np.ndarray
    col_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise DataError(f"Matrix data must be two-dimensional, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            row, col = np.argwhere(~np.isfinite(data))[0]
            raise DataError(f"Non-finite value at row {row + 1} column {col + 1}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

        if self.col_names is not None:
            names = tuple(str(name) for name in self.col_names)
            if len(names) != data.shape[1]:
                raise DataError(f"Expected {data.shape[1]} column names, got {len(names)}")
            if len(set(names)) != len(names):
                raise DataError("Column names must be unique")
            object.__setattr__(self, "col_names", names)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def take_columns(self, indices: Sequence[int]) -> "Matrix":
        """Return a new Matrix restricted to the given columns."""
        idx = np.asarray(indices, dtype=int)
        names = None if self.col_names is None else tuple(self.col_names[i] for i in idx)
        return Matrix(self.data[:, idx], names)

    def take_rows(self, indices: Union[slice, Sequence[int]]) -> "Matrix":
        """Return a new Matrix restricted to the given rows."""
        return Matrix(self.data[indices], self.col_names)

    def equals(self, other: "Matrix") -> bool:
        """Bit-exact equality of data and names."""
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.col_names == other.col_names
        )


MatrixLike = Union[Matrix, np.ndarray]


def as_array(m: MatrixLike) -> np.ndarray:
    """Return the float64 ndarray behind a Matrix or array-like."""
    if isinstance(m, Matrix):
        return m.data
    return np.asarray(m, dtype=np.float64)


def _first_long_row(path: Path, has_header: bool) -> Optional[int]:
    """1-based data row with more fields than the first line, ignoring comments and blank lines."""
    lines = [line.split("#", 1)[0] for line in path.read_text(encoding="utf-8").splitlines()]
    lines = [line for line in lines if line.strip()]
    if not lines:
        return None
    width = lines[0].count(",")
    for i, line in enumerate(lines):
        if line.count(",") > width:
            return i if has_header else i + 1
    return None


def load_csv(path: Union[str, Path], has_header: bool = True) -> Matrix:
    """
    Load a numeric CSV file into a Matrix.

    Args:
        path: CSV file path ('.' decimal separator, comma delimited)
        has_header: Whether the first row holds column names

    Returns:
        Matrix with finite entries; header row becomes col_names

    Raises:
        DataError: empty file, ragged rows, or a cell that is not a finite number
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")

    try:
        frame = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            comment='#',
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no rows")
    except pd.errors.ParserError as e:
        row = _first_long_row(path, has_header)
        if row is None:
            raise DataError(f"{path}: ragged rows ({e})")
        raise DataError(f"{path}: ragged rows (row {row} has too many fields)")

    if frame.shape[0] == 0:
        raise DataError(f"{path}: no rows")
    if frame.isna().any().any():
        row = int(np.argwhere(frame.isna().to_numpy())[0][0])
        raise DataError(f"{path}: ragged rows (row {row + 1} has too few fields)")

    values = np.empty(frame.shape, dtype=np.float64)
    for j, column in enumerate(frame.columns):
        cells = frame[column].str.strip()
        parsed = pd.to_numeric(cells, errors='coerce').to_numpy(dtype=np.float64)
        bad = ~np.isfinite(parsed)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(f"{path}: cannot parse '{cells.iloc[i]}' at row {i + 1} column {j + 1}")
        values[:, j] = parsed

    names = tuple(str(c).strip() for c in frame.columns) if has_header else None
    logger.debug(f"Loaded {path} with shape {values.shape}")
    return Matrix(values, names)


def save_bin(m: Matrix, path: Union[str, Path]) -> None:
    """
    Write a Matrix in the binary container.

    Layout: magic 'FARMAUG1', u64 n, u64 p, n*p little-endian float64 row-major,
    then, if names are present, u64 name count followed by (u32 length, utf-8 bytes) per name.
    """
    path = Path(path)
    n, p = m.data.shape
    with open(path, 'wb') as f:
        f.write(BIN_MAGIC)
        f.write(struct.pack('<QQ', n, p))
        f.write(np.ascontiguousarray(m.data, dtype='<f8').tobytes())
        if m.col_names is not None:
            f.write(struct.pack('<Q', len(m.col_names)))
            for name in m.col_names:
                encoded = name.encode('utf-8')
                f.write(struct.pack('<I', len(encoded)))
                f.write(encoded)


def load_bin(path: Union[str, Path]) -> Matrix:
    """
    Read a Matrix from the binary container.

    Raises:
        DataError: 'bad magic' or 'truncated' payloads
    """
    payload = Path(path).read_bytes()
    if len(payload) < len(BIN_MAGIC) or payload[:len(BIN_MAGIC)] != BIN_MAGIC:
        raise DataError(f"{path}: bad magic")
    if len(payload) < BIN_HEADER_SIZE:
        raise DataError(f"{path}: truncated header")

    n, p = struct.unpack_from('<QQ', payload, len(BIN_MAGIC))
    data_end = BIN_HEADER_SIZE + 8 * n * p
    if len(payload) < data_end:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {data_end} bytes)")
    data = np.frombuffer(payload, dtype='<f8', count=n * p, offset=BIN_HEADER_SIZE).reshape(n, p)

    names = None
    if len(payload) > data_end:
        offset = data_end
        try:
            (count,) = struct.unpack_from('<Q', payload, offset)
            offset += 8
            decoded = []
            for _ in range(count):
                (length,) = struct.unpack_from('<I', payload, offset)
                offset += 4
                if offset + length > len(payload):
                    raise DataError(f"{path}: truncated name table")
                decoded.append(payload[offset:offset + length].decode('utf-8'))
                offset += length
        except struct.error:
            raise DataError(f"{path}: truncated name table")
        names = tuple(decoded)

    return Matrix(data, names)


def standardize(m: MatrixLike, mode: str = "zscore") -> Tuple[Matrix, np.ndarray, np.ndarray]:
    """
    Center (and optionally scale) every column.

    Args:
        m: Input matrix
        mode: 'demean' or 'zscore' (sample sd, n-1 divisor)

    Returns:
        (standardized Matrix, centers, scales); zero-variance columns get scale 1
    """
    if mode not in ("demean", "zscore"):
        raise ValueError(f"Unknown standardization mode '{mode}'")
    x = as_array(m)
    n = x.shape[0]
    centers = x.mean(axis=0)
    scales = np.ones(x.shape[1])
    if mode == "zscore":
        if n < 2:
            raise DataError("zscore standardization needs at least 2 rows")
        sd = x.std(axis=0, ddof=1)
        magnitude = np.maximum(np.abs(centers), 1.0)
        constant = sd <= 1e-14 * magnitude
        scales = np.where(constant, 1.0, sd)

    names = m.col_names if isinstance(m, Matrix) else None
    return Matrix(apply_standardization(x, centers, scales), names), centers, scales


def apply_standardization(x: MatrixLike, centers: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Apply stored centers/scales to new rows (no re-estimation)."""
    return (as_array(x) - centers) / scales


def top_frequency_columns(counts: MatrixLike, m: int) -> np.ndarray:
    """
    Indices of the m columns with the largest column sums.

    Ties go to the lower column index; the result is sorted ascending.
    """
    x = as_array(counts)
    p = x.shape[1]
    if m > p:
        raise DataError(f"Cannot keep {m} columns out of {p}")
    if np.any(x < 0):
        raise DataError("Frequency counts must be nonnegative")
    sums = x.sum(axis=0)
    order = np.argsort(-sums, kind="stable")
    return np.sort(order[:m])


@dataclass(frozen=True, eq=False)
class Panel:
    """
    Labeled panel records and their feature rows.

    records holds asset_id, date, y and (optionally) market_cap; row i of
    records corresponds to row i of features. (asset_id, date) may repeat.
    """

    records: pd.DataFrame
    features: Matrix

    @property
    def y(self) -> np.ndarray:
        return self.records["y"].to_numpy(dtype=np.float64)


def load_panel_csv(path: Union[str, Path]) -> Panel:
    """
    Load panel data with columns asset_id,date,y[,market_cap],f1..fp.

    Raises:
        DataError: missing id columns, unparsable values or negative market caps
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"asset_id": str}, comment='#')
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no rows")
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: ragged rows ({e})")

    missing = [c for c in PANEL_ID_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing panel columns {missing}")
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no rows")

    meta_columns = list(PANEL_ID_COLUMNS)
    if "market_cap" in frame.columns:
        meta_columns.append("market_cap")
    feature_columns = [c for c in frame.columns if c not in meta_columns]

    records = frame[meta_columns].copy()
    records["date"] = pd.to_numeric(records["date"], errors='coerce')
    records["y"] = pd.to_numeric(records["y"], errors='coerce')
    for column in meta_columns[1:]:
        bad = records[column].isna() if column != "market_cap" else pd.Series(False, index=records.index)
        if bad.any():
            i = int(np.argmax(bad.to_numpy()))
            raise DataError(f"{path}: cannot parse column '{column}' at row {i + 1}")
    records["date"] = records["date"].astype(np.int64)
    if "market_cap" in records and (records["market_cap"] < 0).any():
        raise DataError(f"{path}: market_cap must be nonnegative")

    features = frame[feature_columns].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(features)):
        row, col = np.argwhere(~np.isfinite(features))[0]
        raise DataError(f"{path}: cannot parse feature at row {row + 1} column '{feature_columns[col]}'")

    logger.info(f"Loaded panel {path}: {len(records)} rows, {len(feature_columns)} features")
    return Panel(records.reset_index(drop=True), Matrix(features, tuple(feature_columns)))
