"""Spectral embeddings of rescaled blocks.

Three flavours share one :class:`Embedding` container:

* ``psd``   -- top-``d`` eigenpairs, ``x = U diag(lam)^{1/2}``;
* ``indef`` -- ``d_plus`` largest positive and ``d_minus`` most negative
  eigenpairs, ``x = U |diag(lam)|^{1/2}``, Gram core ``I_{d+,d-}``;
* ``asym``  -- top-``d`` singular triplets, ``x = U S^{1/2}``, ``y = V S^{1/2}``.

Every eigenvector (or left singular vector) column is sign-normalised so its
largest-magnitude entry is positive, lowest index winning ties. Alignment
absorbs any convention, but a fixed one makes repeated runs bit-identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from ._io import format_float
from .blocks import EntityIndexSet, RescaledBlock
from .errors import DataError, DegenerateSpectrumWarning, NumericalError

__all__ = [
    "Signature",
    "Embedding",
    "ResidualScore",
    "embed_psd",
    "embed_indefinite",
    "embed_asymmetric",
    "embed",
    "select_rank",
    "profile_log_likelihood",
    "residual_score",
    "embedding_to_csv",
]

_REL_TOL = 1e-10
_TIE_TOL = 1e-10


@dataclass(frozen=True)
class Signature:
    """Numbers of retained positive and negative eigenvalues."""

    d_plus: int
    d_minus: int = 0

    def __post_init__(self):
        if self.d_plus < 0 or self.d_minus < 0 or self.d_plus + self.d_minus < 1:
            raise DataError(f"invalid signature ({self.d_plus}, {self.d_minus})")

    @property
    def d(self) -> int:
        return self.d_plus + self.d_minus

    @property
    def core(self) -> np.ndarray:
        """Diagonal of ``I_{d+,d-}``."""
        return np.concatenate([np.ones(self.d_plus), -np.ones(self.d_minus)])

    @classmethod
    def parse(cls, text: str) -> "Signature":
        try:
            p, m = (int(v) for v in text.split(","))
        except ValueError:
            raise DataError(f"signature must look like 'D+,D-', got {text!r}") from None
        return cls(p, m)


@dataclass(frozen=True, eq=False)
class Embedding:
    """Latent positions of one block.

    ``x`` holds row positions; ``y`` holds column positions for asymmetric
    blocks and is ``None`` otherwise. ``spectrum`` is ordered like the
    columns of ``x`` (signed for indefinite embeddings).
    """

    block_id: str
    x: np.ndarray
    spectrum: np.ndarray
    signature: Signature
    residual_fro: float
    rows: EntityIndexSet
    cols: EntityIndexSet
    kind: str = "psd"
    y: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.signature.d

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def core(self) -> np.ndarray:
        if self.kind == "indef":
            return self.signature.core
        return np.ones(self.d)

    def right(self) -> np.ndarray:
        """Positions that multiply on the right of a Gram product."""
        return self.y if self.y is not None else self.x

    def gram(self) -> np.ndarray:
        """Rank-``d`` reconstruction ``x I x^T`` (or ``x y^T``)."""
        return (self.x * self.core) @ self.right().T


@dataclass(frozen=True)
class ResidualScore:
    block_id: str
    c: float


def _sign_fix(u: np.ndarray) -> np.ndarray:
    # argmax returns the first index on ties
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _check_symmetric(block: RescaledBlock):
    a = block.a
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"block {block.block_id!r} is not square")
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise DataError(f"block {block.block_id!r} is not symmetric")


def _top_eigh(a: np.ndarray, k: int, top: bool):
    """``k`` algebraically largest (``top``) or smallest eigenpairs, extreme first."""
    n = a.shape[0]
    k = min(k, n)
    if top:
        w, v = scipy.linalg.eigh(a, subset_by_index=[n - k, n - 1])
        return w[::-1], v[:, ::-1]
    return scipy.linalg.eigh(a, subset_by_index=[0, k - 1])


def _warn_tie(block_id, kept, nxt, scale):
    if nxt is not None and abs(kept - nxt) <= _TIE_TOL * scale:
        warnings.warn(
            f"block {block_id!r}: retained eigenvalue {kept:.6g} ties the first "
            f"discarded one; the embedding is not unique",
            DegenerateSpectrumWarning, stacklevel=3)


def _residual(a, u, lam):
    return float(np.linalg.norm(a - (u * lam) @ u.T))


def embed_psd(block: RescaledBlock, d: int) -> Embedding:
    """Scaled top-``d`` eigenvectors of a symmetric block."""
    _check_symmetric(block)
    n = block.shape[0]
    if not 1 <= d <= n:
        raise DataError(f"rank {d} not in [1, {n}] for block {block.block_id!r}")
    w, v = _top_eigh(block.a, d + 1, top=True)
    scale = max(abs(w[0]), np.finfo(float).tiny)
    lam, u = w[:d], v[:, :d]
    if lam[-1] <= _REL_TOL * scale:
        raise NumericalError(
            f"block {block.block_id!r}: eigenvalue {d} is {lam[-1]:.3g} <= 0; "
            f"not positive semidefinite at rank {d}")
    _warn_tie(block.block_id, lam[-1], w[d] if w.size > d else None, scale)
    u = u * _sign_fix(u)
    x = u * np.sqrt(lam)
    return Embedding(block.block_id, x, lam.copy(), Signature(d, 0),
                     _residual(block.a, u, lam), block.rows, block.cols, "psd")


def embed_indefinite(block: RescaledBlock, sig: Signature) -> Embedding:
    """Scaled eigenvectors for the ``d_plus`` largest positive and
    ``d_minus`` most negative eigenvalues.

    Columns follow the signed eigenvalues in descending order: positives
    largest first, then negatives smallest magnitude first.
    """
    _check_symmetric(block)
    n = block.shape[0]
    if sig.d > n:
        raise DataError(f"signature {sig} exceeds block size {n}")
    ends = {}
    if sig.d_plus:
        ends["positive"] = (sig.d_plus, True, *_top_eigh(block.a, sig.d_plus + 1, top=True))
    if sig.d_minus:
        ends["negative"] = (sig.d_minus, False, *_top_eigh(block.a, sig.d_minus + 1, top=False))
    scale = max(max(abs(w[0]) for _, _, w, _ in ends.values()), np.finfo(float).tiny)
    parts_w, parts_v = [], []
    for label, (count, top, w, v) in ends.items():
        kept = w[:count]
        ok = kept > _REL_TOL * scale if top else kept < -_REL_TOL * scale
        if not np.all(ok):
            raise NumericalError(
                f"block {block.block_id!r}: fewer than {count} {label} eigenvalues")
        nxt = w[count] if w.size > count else None
        if nxt is not None and (nxt > 0 if top else nxt < 0):
            _warn_tie(block.block_id, kept[-1], nxt, scale)
        # both groups end up in descending algebraic order
        parts_w.append(kept if top else kept[::-1])
        parts_v.append(v[:, :count] if top else v[:, count - 1::-1])
    lam = np.concatenate(parts_w)
    u = np.hstack(parts_v)
    u = u * _sign_fix(u)
    x = u * np.sqrt(np.abs(lam))
    return Embedding(block.block_id, x, lam, sig, _residual(block.a, u, lam),
                     block.rows, block.cols, "indef")


def embed_asymmetric(block: RescaledBlock, d: int) -> Embedding:
    """Left/right positions from the top-``d`` singular triplets."""
    n, m = block.shape
    if not 1 <= d <= min(n, m):
        raise DataError(f"rank {d} not in [1, {min(n, m)}] for block {block.block_id!r}")
    u, s, vt = np.linalg.svd(block.a, full_matrices=False)
    scale = max(s[0], np.finfo(float).tiny)
    if s[d - 1] <= _REL_TOL * scale:
        raise NumericalError(
            f"block {block.block_id!r}: singular value {d} is numerically zero")
    _warn_tie(block.block_id, s[d - 1], s[d] if s.size > d else None, scale)
    u, s, v = u[:, :d], s[:d], vt[:d].T
    signs = _sign_fix(u)
    u, v = u * signs, v * signs
    root = np.sqrt(s)
    resid = float(np.linalg.norm(block.a - (u * s) @ v.T))
    return Embedding(block.block_id, u * root, s.copy(), Signature(d, 0), resid,
                     block.rows, block.cols, "asym", y=v * root)


def embed(block: RescaledBlock, mode: str, rank) -> Embedding:
    """Dispatch on ``mode`` in {'psd', 'indef', 'asym'}.

    ``rank`` is an int, or a :class:`Signature` for ``indef``.
    """
    if mode == "psd":
        return embed_psd(block, int(rank))
    if mode == "indef":
        sig = rank if isinstance(rank, Signature) else Signature(int(rank), 0)
        return embed_indefinite(block, sig)
    if mode == "asym":
        return embed_asymmetric(block, int(rank))
    raise DataError(f"unknown mode {mode!r}")


def profile_log_likelihood(spectrum) -> np.ndarray:
    """Two-group Gaussian profile log-likelihood for each split 1..p-1.

    Groups share a pooled variance; a split with zero pooled variance
    scores ``+inf``.
    """
    s = np.asarray(spectrum, dtype=np.float64)
    p = s.size
    out = np.empty(p - 1)
    for q in range(1, p):
        g1, g2 = s[:q], s[q:]
        ss = np.sum((g1 - g1.mean()) ** 2) + np.sum((g2 - g2.mean()) ** 2)
        var = ss / max(p - 2, 1)
        if var <= 0:
            out[q - 1] = np.inf
            continue
        out[q - 1] = -0.5 * p * math.log(2 * math.pi * var) - ss / (2 * var)
    return out


def select_rank(spectrum_full) -> int:
    """Elbow of a descending spectrum by profile likelihood."""
    s = np.asarray(spectrum_full, dtype=np.float64)
    if s.ndim != 1 or s.size < 3:
        raise DataError("select_rank needs at least 3 values")
    if np.all(s == s[0]):
        warnings.warn("constant spectrum; returning rank 1", DegenerateSpectrumWarning,
                      stacklevel=2)
        return 1
    ll = profile_log_likelihood(s)
    return int(np.argmax(ll)) + 1


def residual_score(e: Embedding) -> ResidualScore:
    """``residual_fro * log(n) / n^{3/2}`` -- a proxy for the block's entrywise error."""
    n = e.n
    if n < 2:
        raise DataError("residual score needs n >= 2")
    return ResidualScore(e.block_id, e.residual_fro * math.log(n) / n ** 1.5)


def embedding_to_csv(e: Embedding) -> str:
    lines = [f"{e.block_id},{e.signature.d_plus},{e.signature.d_minus},{e.n}"]
    lines += [",".join(format_float(v) for v in row) for row in e.x]
    if e.y is not None:
        lines.append("Y")
        lines += [",".join(format_float(v) for v in row) for row in e.y]
    return "\n".join(lines) + "\n"
