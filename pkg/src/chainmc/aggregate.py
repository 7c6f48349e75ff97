"""Inverse-variance fusion of entries observed by several sources."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blocks import EntityIndexSet, ObservedBlock, estimate_q
from .errors import DataError

__all__ = [
    "NoiseEstimate",
    "FusedTable",
    "estimate_noise",
    "fuse",
    "redistribute",
    "aggregate",
]

ZERO_VARIANCE = 1e-12


@dataclass(frozen=True)
class NoiseEstimate:
    block_id: str
    sigma2_hat: float


@dataclass(frozen=True, eq=False)
class FusedTable:
    """Fused values over the union of entities; ``mask`` marks observed cells."""

    rows: EntityIndexSet
    cols: EntityIndexSet
    values: np.ndarray
    mask: np.ndarray
    symmetric: bool


def _low_rank(a: np.ndarray, d: int, symmetric: bool) -> np.ndarray:
    if symmetric:
        lam, u = np.linalg.eigh(a)
        keep = np.argsort(-np.abs(lam), kind="stable")[:d]
        return (u[:, keep] * lam[keep]) @ u[:, keep].T
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return (u[:, :d] * s[:d]) @ vt[:d]


def estimate_noise(block: ObservedBlock, d: int) -> NoiseEstimate:
    """Mean squared residual over observed cells.

    The reference is the rank-``d`` truncation (largest ``|eigenvalue|``)
    of the block divided by its estimated observation rate; the residual is
    taken against the unscaled observed values.
    """
    if d < 1 or d > min(block.shape):
        raise DataError(f"rank {d} not in [1, {min(block.shape)}]")
    q = estimate_q(block)
    p_hat = _low_rank(np.where(block.mask, block.values, 0.0) / q, d, block.symmetric)
    resid = np.where(block.mask, block.values - p_hat, 0.0)
    sigma2 = float(np.sum(resid * resid) / np.count_nonzero(block.mask))
    return NoiseEstimate(block.block_id, sigma2)


def fuse(blocks: Sequence[ObservedBlock], noise: Sequence[NoiseEstimate]) -> FusedTable:
    """Weighted average of every observed value of each entry.

    Weights are proportional to ``1 / sigma2_hat`` and normalised over the
    sources observing that entry. A zero estimate is treated as
    ``1e-12`` so a noiseless source dominates; if every observer is
    noiseless they share equal weight.
    """
    if not blocks:
        raise DataError("fuse needs at least one block")
    sym = {b.symmetric for b in blocks}
    if len(sym) != 1:
        raise DataError("cannot fuse symmetric and rectangular blocks together")
    symmetric = sym.pop()
    by_id = {n.block_id: n.sigma2_hat for n in noise}
    rows = np.unique(np.concatenate([b.rows.ids for b in blocks]))
    cols = rows if symmetric else np.unique(np.concatenate([b.cols.ids for b in blocks]))
    num = np.zeros((rows.size, cols.size))
    den = np.zeros_like(num)
    raw = np.zeros_like(num)
    count = np.zeros(num.shape, dtype=np.int64)
    for b in blocks:
        if b.block_id not in by_id:
            raise DataError(f"no noise estimate for block {b.block_id!r}")
        s2 = by_id[b.block_id]
        if s2 < 0:
            raise DataError(f"negative noise estimate for block {b.block_id!r}")
        w = 1.0 / max(s2, ZERO_VARIANCE)
        cells = np.ix_(np.searchsorted(rows, b.rows.ids), np.searchsorted(cols, b.cols.ids))
        obs = np.where(b.mask, b.values, 0.0)
        num[cells] += w * obs
        den[cells] += w * b.mask
        raw[cells] += obs
        count[cells] += b.mask
    mask = count > 0
    values = np.zeros_like(num)
    many = count > 1
    values[many] = num[many] / den[many]
    values[count == 1] = raw[count == 1]
    if symmetric:
        upper = np.triu(values)
        values = upper + np.triu(values, 1).T
    return FusedTable(EntityIndexSet(rows), EntityIndexSet(cols), values, mask, symmetric)


def redistribute(fused: FusedTable, blocks: Sequence[ObservedBlock]) -> list:
    """Restrict the fused table back onto each block's entity rectangle.

    Each block receives the union mask on its rectangle and a re-estimated
    observation rate.
    """
    out = []
    for b in blocks:
        cells = np.ix_(fused.rows.positions(b.rows.ids), fused.cols.positions(b.cols.ids))
        mask = fused.mask[cells]
        values = np.where(mask, fused.values[cells], 0.0)
        nb = ObservedBlock(b.block_id, b.rows, values, mask,
                           cols=None if b.symmetric else b.cols, symmetric=b.symmetric)
        out.append(nb.with_q(estimate_q(nb)))
    return out


def aggregate(blocks: Sequence[ObservedBlock], d: int):
    """Estimate noise, fuse and redistribute -> (new blocks, noise estimates)."""
    noise = [estimate_noise(b, d) for b in blocks]
    return redistribute(fuse(blocks, noise), blocks), noise
