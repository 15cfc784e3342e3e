"""CSV reading shared by the file loaders."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


def read_tagged_csv(path, dtype=float):
    """Read a CSV with ``# key=value`` metadata lines and one column-header line.

    Returns ``(meta, columns, data)``. Malformed content raises ``ConfigError``.
    """
    meta = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, _, val = lines[k][1:].strip().partition("=")
        meta[key.strip()] = val.strip()
        k += 1
    if k >= len(lines):
        raise ConfigError(f"{path}: missing column header")
    columns = [c.strip() for c in lines[k].split(",")]
    rows = [ln for ln in lines[k + 1:] if ln.strip()]
    try:
        data = np.array([[dtype(v) for v in ln.split(",")] for ln in rows], dtype=dtype)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed data ({exc})") from exc
    if len(rows) == 0:
        data = np.empty((0, len(columns)), dtype=dtype)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ConfigError(f"{path}: rows do not match the {len(columns)} header columns")
    return meta, columns, data
