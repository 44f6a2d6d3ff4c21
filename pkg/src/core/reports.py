"""Report emission: aggregate CSV tables through pandas and JSON sidecars.

Files are written atomically. CSV numbers carry six significant digits and
rows keep the order they were produced in, so identical runs give identical
bytes.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import PairingError
from .tensors import atomic_write_bytes

CSV_FLOAT_FORMAT = "%.6g"


def _jsonable(value):
    """Recursively convert numpy scalars, arrays and paths into JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: str | os.PathLike, payload) -> Path:
    """Write ``payload`` as indented JSON, atomically."""
    path = Path(path)
    text = json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))
    return path


def read_json(path: str | os.PathLike, what: str = "file"):
    """Load a JSON file; a missing or malformed file is a PairingError naming ``what``."""
    path = Path(path)
    if not path.is_file():
        raise PairingError(f"missing {what}: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PairingError(f"unreadable {what} {path}: line {e.lineno}: {e.msg}") from e


def write_csv(path: str | os.PathLike, df: pd.DataFrame) -> Path:
    """Write a report table with six significant digits, atomically."""
    path = Path(path)
    text = df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    atomic_write_bytes(path, text.encode("utf-8"))
    return path
