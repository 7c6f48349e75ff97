"""Chain-linked recovery of an unobserved block.

Given blocks ``i_0, ..., i_L`` where consecutive blocks overlap, each block
is embedded on its own, consecutive embeddings are aligned on their shared
entities, and the composed alignment carries the first block's frame into
the last block's frame::

    P_hat[U_0, U_L] = X_0 @ W_1 @ ... @ W_L @ core @ R_L.T

with ``core`` the signature matrix for indefinite blocks (identity
otherwise) and ``R_L`` the last block's row positions (column positions
for asymmetric blocks).
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._io import atomic_write_text, format_float, labelled_matrix_csv
from .align import align_pair, compose
from .blocks import EntityIndexSet, ObservedBlock, RescaledBlock, compute_overlap, rescale
from .embed import Embedding, Signature, embed
from .errors import DataError

__all__ = [
    "RecoveredBlock",
    "EmbeddingCache",
    "ChainFit",
    "fit_chain",
    "cmmi",
    "cmmi_psd",
    "cmmi_indefinite",
    "cmmi_asymmetric",
    "first_order_decomposition",
    "overlay_observed",
    "write_recovered",
]

MODES = ("psd", "indef", "asym")


@dataclass(eq=False)
class RecoveredBlock:
    """Estimate of ``P`` over ``rows x cols`` plus optional inference output."""

    rows: EntityIndexSet
    cols: EntityIndexSet
    estimate: np.ndarray
    chain: tuple
    stderr: Optional[np.ndarray] = None
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (len(self.rows), len(self.cols))
        if self.estimate.shape != shape:
            raise DataError(f"estimate {self.estimate.shape} does not match entities {shape}")
        for name in ("stderr", "ci_lower", "ci_upper"):
            v = getattr(self, name)
            if v is not None and v.shape != shape:
                raise DataError(f"{name} {v.shape} does not match entities {shape}")

    def entry(self, s: int, t: int) -> float:
        i = self.rows.positions([s])[0]
        j = self.cols.positions([t])[0]
        return float(self.estimate[i, j])


def _rank_key(mode: str, rank):
    if mode == "indef":
        sig = rank if isinstance(rank, Signature) else Signature(int(rank), 0)
        return (sig.d_plus, sig.d_minus)
    if isinstance(rank, Signature):
        raise DataError(f"mode {mode!r} takes an integer rank, not a signature")
    return int(rank)


class EmbeddingCache:
    """Embeddings keyed by ``(block_id, mode, rank)``.

    The key does not see block contents; use a fresh cache when blocks with
    recycled ids carry different data.
    """

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def get(self, block: RescaledBlock, mode: str, rank) -> Embedding:
        key = (block.block_id, mode, _rank_key(mode, rank))
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        e = embed(block, mode, rank)
        with self._lock:
            return self._store.setdefault(key, e)


@dataclass(eq=False)
class ChainFit:
    """Everything computed along one chain; reused by the inference code."""

    mode: str
    blocks: list
    embeddings: list
    maps: list = field(default_factory=list)
    w: Optional[np.ndarray] = None

    @property
    def chain(self) -> tuple:
        return tuple(b.block_id for b in self.blocks)

    @property
    def first(self) -> Embedding:
        return self.embeddings[0]

    @property
    def last(self) -> Embedding:
        return self.embeddings[-1]

    def estimate(self) -> np.ndarray:
        e0, el = self.first, self.last
        left = e0.x @ self.w
        return (left * el.core) @ el.right().T

    def recovered(self) -> RecoveredBlock:
        return RecoveredBlock(self.first.rows, self.last.cols, self.estimate(), self.chain)


def _as_rescaled(blocks) -> list:
    out = []
    for b in blocks:
        if isinstance(b, ObservedBlock):
            b = rescale(b)
        elif not isinstance(b, RescaledBlock):
            raise DataError(f"expected a block, got {type(b).__name__}")
        out.append(b)
    return out


def fit_chain(blocks: Sequence, mode: str, rank, cache: Optional[EmbeddingCache] = None,
              threads: int = 1) -> ChainFit:
    """Embed every block of the chain and align consecutive pairs.

    ``blocks`` may hold observed blocks (rescaled on the fly) or rescaled
    blocks. ``rank`` is an int, or a :class:`Signature` in ``indef`` mode.
    """
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")
    blocks = _as_rescaled(blocks)
    if not blocks:
        raise DataError("empty chain")
    if mode != "asym":
        for b in blocks:
            if not b.symmetric:
                raise DataError(f"block {b.block_id!r} is asymmetric; use mode 'asym'")
    cache = EmbeddingCache() if cache is None else cache
    unique = list({b.block_id: b for b in blocks}.values())
    if threads > 1 and len(unique) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: cache.get(b, mode, rank), unique))
    embeddings = [cache.get(b, mode, rank) for b in blocks]
    d = embeddings[0].d
    maps = []
    for a, b in zip(embeddings[:-1], embeddings[1:]):
        maps.append(align_pair(a, b, compute_overlap(a, b)))
    w = compose(maps) if maps else np.eye(d)
    return ChainFit(mode, blocks, embeddings, maps, w)


def cmmi(blocks: Sequence, mode: str, rank, cache: Optional[EmbeddingCache] = None,
         threads: int = 1) -> RecoveredBlock:
    """Recover the block between the first block's rows and the last block's
    columns along ``blocks``."""
    return fit_chain(blocks, mode, rank, cache, threads).recovered()


def cmmi_psd(blocks: Sequence, d: int, cache: Optional[EmbeddingCache] = None) -> RecoveredBlock:
    """Positive semidefinite chain with Procrustes alignments."""
    return cmmi(blocks, "psd", d, cache)


def cmmi_indefinite(blocks: Sequence, sig: Signature,
                    cache: Optional[EmbeddingCache] = None) -> RecoveredBlock:
    """Indefinite chain with least-squares alignments and core ``I_{d+,d-}``."""
    return cmmi(blocks, "indef", sig, cache)


def cmmi_asymmetric(blocks: Sequence, d: int,
                    cache: Optional[EmbeddingCache] = None) -> RecoveredBlock:
    """Rectangular chain; each link may overlap in rows, columns or both."""
    return cmmi(blocks, "asym", d, cache)


def first_order_decomposition(fit: ChainFit, x, e_first, e_last, y=None, core=None):
    """Split the estimation error into its linear part and a remainder.

    Parameters
    ----------
    fit : ChainFit
        The chain whose estimate is examined.
    x : ndarray, shape (N, d)
        Population row positions indexed by entity id.
    e_first, e_last : ndarray
        ``A - P`` for the first and last chain blocks (rescaled data minus
        truth on the block's own entity rectangle).
    y : ndarray, optional
        Population column positions; ``None`` for symmetric models.
    core : array_like, optional
        Diagonal of the signature matrix; ``None`` means all ones.

    Returns
    -------
    m_star, remainder : ndarray
        ``m_star = e_first Y0 (Y0'Y0)^-1 YL' + X0 (XL'XL)^-1 XL' e_last`` and
        ``remainder = (P_hat - P) - m_star``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = x if y is None else np.asarray(y, dtype=np.float64)
    core = np.ones(x.shape[1]) if core is None else np.asarray(core, dtype=np.float64)
    b0, bl = fit.blocks[0], fit.blocks[-1]
    e_first = np.asarray(e_first, dtype=np.float64)
    e_last = np.asarray(e_last, dtype=np.float64)
    if e_first.shape != b0.shape or e_last.shape != bl.shape:
        raise DataError(
            f"noise shapes {e_first.shape}, {e_last.shape} do not match blocks "
            f"{b0.shape}, {bl.shape}")
    x0, xl = x[b0.rows.ids], x[bl.rows.ids]
    y0, yl = y[b0.cols.ids], y[bl.cols.ids]
    fwd = e_first @ y0 @ np.linalg.solve(y0.T @ y0, yl.T)
    bwd = x0 @ np.linalg.solve(xl.T @ xl, xl.T @ e_last)
    m_star = fwd + bwd
    truth = (x0 * core) @ yl.T
    remainder = (fit.estimate() - truth) - m_star
    return m_star, remainder


def overlay_observed(rec: RecoveredBlock, blocks: Sequence[ObservedBlock]) -> RecoveredBlock:
    """Replace estimated cells by directly observed values where available.

    The first block (in the given order) observing a cell supplies it.
    """
    est = rec.estimate.copy()
    done = np.zeros(est.shape, dtype=bool)
    for b in blocks:
        _, ra, rb = np.intersect1d(rec.rows.ids, b.rows.ids, return_indices=True)
        _, ca, cb = np.intersect1d(rec.cols.ids, b.cols.ids, return_indices=True)
        if ra.size == 0 or ca.size == 0:
            continue
        cells = np.ix_(ra, ca)
        take = b.mask[np.ix_(rb, cb)] & ~done[cells]
        target = est[cells]
        target[take] = b.values[np.ix_(rb, cb)][take]
        est[cells] = target
        done[cells] |= take
    return RecoveredBlock(rec.rows, rec.cols, est, rec.chain, rec.stderr,
                          rec.ci_lower, rec.ci_upper)


def write_recovered(rec: RecoveredBlock, path) -> list:
    """Write the estimate and, when present, ``_stderr`` and ``_ci`` companions.

    The CI file is long format: ``row,col,estimate,lower,upper``.
    """
    path = Path(path)
    written = [atomic_write_text(path, labelled_matrix_csv(rec.rows.ids, rec.cols.ids,
                                                           rec.estimate))]
    stem = path.with_suffix("")
    if rec.stderr is not None:
        written.append(atomic_write_text(
            Path(f"{stem}_stderr.csv"),
            labelled_matrix_csv(rec.rows.ids, rec.cols.ids, rec.stderr)))
    if rec.ci_lower is not None:
        lines = ["row,col,estimate,lower,upper"]
        for i, r in enumerate(rec.rows.ids):
            for j, c in enumerate(rec.cols.ids):
                lines.append(f"{int(r)},{int(c)},{format_float(rec.estimate[i, j])},"
                             f"{format_float(rec.ci_lower[i, j])},"
                             f"{format_float(rec.ci_upper[i, j])}")
        written.append(atomic_write_text(Path(f"{stem}_ci.csv"), "\n".join(lines) + "\n"))
    return written
