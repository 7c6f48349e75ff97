"""Deterministic CSV formatting and atomic file writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

NA = "NA"


def format_float(x) -> str:
    # shortest round-trip repr: stable across runs and platforms
    x = float(x)
    if not np.isfinite(x):
        return NA
    return repr(x)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def labelled_matrix_csv(row_ids, col_ids, values, mask=None) -> str:
    """Header of column ids, first column of row ids; ``NA`` where masked out."""
    lines = ["," + ",".join(str(int(c)) for c in col_ids)]
    for i, r in enumerate(row_ids):
        cells = []
        for j in range(values.shape[1]):
            ok = mask is None or mask[i, j]
            cells.append(format_float(values[i, j]) if ok else NA)
        lines.append(f"{int(r)}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def read_labelled_matrix_csv(path):
    """Inverse of :func:`labelled_matrix_csv` -> (row_ids, col_ids, values with NaN)."""
    text = Path(path).read_text().splitlines()
    col_ids = np.array([int(c) for c in text[0].split(",")[1:]], dtype=np.int64)
    row_ids, rows = [], []
    for line in text[1:]:
        if not line:
            continue
        parts = line.split(",")
        row_ids.append(int(parts[0]))
        rows.append([np.nan if p == NA else float(p) for p in parts[1:]])
    return np.array(row_ids, dtype=np.int64), col_ids, np.array(rows, dtype=np.float64)
