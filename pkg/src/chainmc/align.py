"""Frame alignment between embeddings of overlapping blocks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .blocks import Overlap, compute_overlap
from .embed import Embedding
from .errors import DataError, NonUniqueAlignmentWarning, NumericalError

__all__ = [
    "AlignmentMap",
    "procrustes",
    "lsq_align",
    "align_pair_psd",
    "align_pair_indefinite",
    "align_pair_asymmetric",
    "align_pair",
    "compose",
]

ORTHOGONAL = "orthogonal"
GENERAL_LINEAR = "general_linear"


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    """``w`` carries the frame of ``from_block`` onto that of ``to_block``:
    ``x_from[overlap] @ w ~= x_to[overlap]``."""

    from_block: str
    to_block: str
    w: np.ndarray
    kind: str
    overlap_size: int

    def __post_init__(self):
        if self.kind not in (ORTHOGONAL, GENERAL_LINEAR):
            raise ValueError(f"unknown alignment kind {self.kind!r}")


def procrustes(a, b) -> np.ndarray:
    """Orthogonal ``W`` minimising ``||a W - b||_F``.

    ``W = W1 W2^T`` from the SVD ``a^T b = W1 S W2^T``. Warns when the
    minimiser is not unique (``a^T b`` rank deficient or with repeated
    singular values).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DataError(f"procrustes needs equal m x d inputs, got {a.shape} and {b.shape}")
    m, d = a.shape
    if m < d:
        raise DataError(f"procrustes needs at least d={d} rows, got {m}")
    w1, s, w2t = np.linalg.svd(a.T @ b)
    top = s[0] if s.size else 0.0
    if top == 0.0 or s[-1] <= 1e-12 * top or (d > 1 and np.min(np.abs(np.diff(s))) <= 1e-10 * top):
        warnings.warn("cross-product is rank deficient or has repeated singular values; "
                      "Procrustes solution is not unique", NonUniqueAlignmentWarning,
                      stacklevel=2)
    return w1 @ w2t


def lsq_align(a, b, rank_tol: Optional[float] = None) -> np.ndarray:
    """Unconstrained least-squares ``W = a^+ b``.

    ``rank_tol`` defaults to ``1e-10`` times the largest singular value of
    ``a``; a smaller trailing singular value is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DataError(f"lsq_align needs matching row counts, got {a.shape} and {b.shape}")
    m, d = a.shape
    if m < d:
        raise DataError(f"lsq_align needs at least d={d} rows, got {m}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    tol = 1e-10 * s[0] if rank_tol is None else rank_tol
    if s.size == 0 or s[-1] <= tol:
        raise NumericalError(
            f"overlap positions have numerical rank below {d} "
            f"(smallest singular value {s[-1] if s.size else 0.0:.3g})")
    return vt.T @ ((u.T @ b) / s[:, None])


def _rows(e: Embedding, local: np.ndarray, use_y: bool = False) -> np.ndarray:
    m = e.y if use_y else e.x
    return m[local]


def _need(size: int, d: int, ov: Overlap, what: str):
    if size < d:
        raise DataError(
            f"blocks {ov.block_a!r} and {ov.block_b!r} share {size} {what}, need >= {d}")


def align_pair_psd(e_a: Embedding, e_b: Embedding, ov: Optional[Overlap] = None) -> AlignmentMap:
    """Procrustes alignment of ``e_a`` onto ``e_b`` over their shared rows."""
    ov = compute_overlap(e_a, e_b) if ov is None else ov
    _need(ov.n_rows, e_a.d, ov, "entities")
    w = procrustes(_rows(e_a, ov.local_rows_a), _rows(e_b, ov.local_rows_b))
    return AlignmentMap(e_a.block_id, e_b.block_id, w, ORTHOGONAL, ov.n_rows)


def align_pair_indefinite(e_a: Embedding, e_b: Embedding,
                          ov: Optional[Overlap] = None) -> AlignmentMap:
    """Least-squares alignment over shared rows (no group constraint)."""
    ov = compute_overlap(e_a, e_b) if ov is None else ov
    _need(ov.n_rows, e_a.d, ov, "entities")
    w = lsq_align(_rows(e_a, ov.local_rows_a), _rows(e_b, ov.local_rows_b))
    return AlignmentMap(e_a.block_id, e_b.block_id, w, GENERAL_LINEAR, ov.n_rows)


def align_pair_asymmetric(e_a: Embedding, e_b: Embedding,
                          ov: Optional[Overlap] = None) -> AlignmentMap:
    """Row-side and/or column-side least-squares alignment.

    The row problem gives ``W_X`` with ``x_a W_X ~= x_b``; the column
    problem gives ``W_Y`` with ``y_b W_Y^T ~= y_a``. When both overlaps
    reach ``d`` the two are averaged.
    """
    ov = compute_overlap(e_a, e_b) if ov is None else ov
    d = e_a.d
    use_rows, use_cols = ov.n_rows >= d, ov.n_cols >= d
    if not (use_rows or use_cols):
        raise DataError(
            f"blocks {ov.block_a!r} and {ov.block_b!r} share {ov.n_rows} rows and "
            f"{ov.n_cols} columns, need >= {d} of either")
    ws = []
    if use_rows:
        ws.append(lsq_align(_rows(e_a, ov.local_rows_a), _rows(e_b, ov.local_rows_b)))
    if use_cols:
        wy_t = lsq_align(_rows(e_b, ov.local_cols_b, use_y=True),
                         _rows(e_a, ov.local_cols_a, use_y=True))
        ws.append(wy_t.T)
    w = ws[0] if len(ws) == 1 else 0.5 * (ws[0] + ws[1])
    return AlignmentMap(e_a.block_id, e_b.block_id, w, GENERAL_LINEAR,
                        max(ov.n_rows if use_rows else 0, ov.n_cols if use_cols else 0))


_ALIGNERS = {"psd": align_pair_psd, "indef": align_pair_indefinite,
             "asym": align_pair_asymmetric}


def align_pair(e_a: Embedding, e_b: Embedding, ov: Optional[Overlap] = None) -> AlignmentMap:
    """Alignment appropriate for the embeddings' kind."""
    return _ALIGNERS[e_a.kind](e_a, e_b, ov)


def compose(chain: Sequence[AlignmentMap]) -> np.ndarray:
    """Left-to-right product of a chain of alignment maps."""
    if not chain:
        raise DataError("cannot compose an empty chain")
    d = chain[0].w.shape[0]
    w = np.eye(d)
    for k, m in enumerate(chain):
        if m.w.shape != (d, d):
            raise DataError(f"map {k} is {m.w.shape}, expected {(d, d)}")
        if k and chain[k - 1].to_block != m.from_block:
            raise DataError(
                f"broken chain: {chain[k - 1].to_block!r} does not feed {m.from_block!r}")
        w = w @ m.w
    return w
