"""
Utility functions for factorAug.
Includes hashing, name sanitisation, timestamps and logging setup.
"""

import hashlib
import json
import logging
import re
import sys
import unicodedata
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import colorlog
import numpy as np

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Configure the root logger with a coloured console handler and an optional file handler.

    Args:
        level: Logging level name
        log_file: Path of the log file, or None for console only
    """
    root = logging.getLogger()
    root.setLevel(getattr(logging, level.upper()))
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = colorlog.StreamHandler(sys.stdout)
    console.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT))
    root.addHandler(console)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)


def sanitize_filename(name: str, max_length: int = 100) -> str:
    """
    Output file name for a design, bundle array or subdirectory name.

    Accents are folded to ASCII, characters outside [A-Za-z0-9_.-] and
    whitespace are dropped or turned into single underscores, and leading or
    trailing dots and underscores are stripped. Long names are cut to
    max_length with their extension kept. An empty result becomes 'artifact'.
    """
    ascii_name = unicodedata.normalize('NFKD', name).encode('ascii', 'ignore').decode('ascii')
    ascii_name = re.sub(r'[^\w\s\-.]', '', ascii_name)
    ascii_name = re.sub(r'[\s_]+', '_', ascii_name).strip('._') or "artifact"
    if len(ascii_name) <= max_length:
        return ascii_name
    stem, dot, extension = ascii_name.rpartition('.')
    if not dot:
        return ascii_name[:max_length]
    return f"{stem[:max_length - len(extension) - 1]}.{extension}"


def format_timestamp(dt: Optional[datetime] = None) -> str:
    """Format a datetime as an ISO-8601 string (defaults to now)."""
    if dt is None:
        dt = datetime.now()
    return dt.isoformat(timespec="seconds")


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(data: Dict[str, Any]) -> str:
    """Serialise a dictionary deterministically (sorted keys, fixed separators)."""
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2, allow_nan=True)


def hash_payload(data: Dict[str, Any]) -> str:
    """SHA-256 hex digest of the canonical JSON of a dictionary."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def derive_seed(*parts: int) -> int:
    """Derive a reproducible 32-bit seed from a sequence of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
