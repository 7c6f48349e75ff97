"""Observed blocks, overlaps, and ingestion.

A block is one source's partial view of the population matrix: the global
entity ids of its rows (and columns), a dense value matrix, a boolean mask of
observed cells, and a sampling rate ``q``. Unobserved cells hold ``0.0`` in
``values`` and are never read; all logic goes through ``mask``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "EntityIndexSet",
    "ObservedBlock",
    "RescaledBlock",
    "Overlap",
    "load_manifest",
    "read_values_csv",
    "estimate_q",
    "rescale",
    "compute_overlap",
    "cooccurrence_to_pmi",
]

MISSING_TOKEN = "NA"
SYMMETRY_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EntityIndexSet:
    """Strictly increasing array of global (0-based) entity ids."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 1:
            raise DataError("entity ids must be one-dimensional")
        if ids.size and not np.issubdtype(ids.dtype, np.integer):
            if not np.all(np.mod(ids, 1) == 0):
                raise DataError("entity ids must be integers")
        ids = ids.astype(np.int64, copy=True)
        if ids.size and ids.min() < 0:
            raise DataError("entity ids must be nonnegative")
        if ids.size > 1 and np.any(np.diff(ids) <= 0):
            raise DataError("entity ids must be strictly increasing without duplicates")
        object.__setattr__(self, "ids", _frozen(ids))

    @classmethod
    def from_iterable(cls, ids: Iterable[int]) -> "EntityIndexSet":
        return cls(np.fromiter((int(i) for i in ids), dtype=np.int64))

    def __len__(self) -> int:
        return int(self.ids.size)

    def __iter__(self):
        return iter(self.ids.tolist())

    def __contains__(self, entity) -> bool:
        k = np.searchsorted(self.ids, entity)
        return bool(k < self.ids.size and self.ids[k] == entity)

    def __eq__(self, other) -> bool:
        return isinstance(other, EntityIndexSet) and np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash(self.ids.tobytes())

    def positions(self, entities) -> np.ndarray:
        """Local positions of ``entities``; every entity must be present."""
        entities = np.asarray(entities, dtype=np.int64)
        if self.ids.size == 0:
            if entities.size:
                raise DataError(f"entities {entities.tolist()} not in index set")
            return np.zeros(0, dtype=np.int64)
        pos = np.searchsorted(self.ids, entities)
        ok = (pos < self.ids.size) & (self.ids[np.minimum(pos, self.ids.size - 1)] == entities)
        if not np.all(ok):
            raise DataError(f"entities {entities[~ok].tolist()} not in index set")
        return pos

    def intersect(self, other: "EntityIndexSet") -> "EntityIndexSet":
        return EntityIndexSet(np.intersect1d(self.ids, other.ids, assume_unique=True))

    def union(self, other: "EntityIndexSet") -> "EntityIndexSet":
        return EntityIndexSet(np.union1d(self.ids, other.ids))


def _as_entities(ids) -> EntityIndexSet:
    if isinstance(ids, EntityIndexSet):
        return ids
    return EntityIndexSet(np.asarray(ids, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ObservedBlock:
    """One source: entity sets, observed values, mask and sampling rate.

    ``q`` is ``None`` when unknown; :func:`estimate_q` fills it in.
    For symmetric blocks ``cols`` is the same object as ``rows``.
    """

    block_id: str
    rows: EntityIndexSet
    values: np.ndarray
    mask: np.ndarray
    cols: Optional[EntityIndexSet] = None
    q: Optional[float] = None
    symmetric: bool = True

    def __post_init__(self):
        rows = _as_entities(self.rows)
        cols = rows if self.cols is None else _as_entities(self.cols)
        if self.symmetric and cols is not rows and cols != rows:
            raise DataError(f"block {self.block_id!r}: symmetric block needs rows == cols")
        if self.symmetric:
            cols = rows
        mask = np.asarray(self.mask, dtype=bool).copy()
        values = np.asarray(self.values, dtype=np.float64).copy()
        shape = (len(rows), len(cols))
        if values.shape != shape or mask.shape != shape:
            raise DataError(
                f"block {self.block_id!r}: values {values.shape} / mask {mask.shape} "
                f"do not match entity sets {shape}"
            )
        values[~mask] = 0.0
        if not np.all(np.isfinite(values)):
            raise DataError(f"block {self.block_id!r}: non-finite observed value")
        if self.symmetric:
            if not np.array_equal(mask, mask.T):
                raise DataError(f"block {self.block_id!r}: mask is not symmetric")
            if np.any(np.abs(values - values.T) > SYMMETRY_TOL):
                raise DataError(f"block {self.block_id!r}: values declared symmetric are not")
        if self.q is not None and not (0.0 < float(self.q) <= 1.0):
            raise DataError(f"block {self.block_id!r}: q must lie in (0, 1], got {self.q}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "block_id", str(self.block_id))
        if self.q is not None:
            object.__setattr__(self, "q", float(self.q))

    @property
    def shape(self):
        return self.values.shape

    def with_q(self, q: float) -> "ObservedBlock":
        return ObservedBlock(self.block_id, self.rows, self.values, self.mask,
                             cols=self.cols, q=q, symmetric=self.symmetric)


@dataclass(frozen=True, eq=False)
class RescaledBlock:
    """``a = values / q`` on observed cells, zero elsewhere."""

    block_id: str
    rows: EntityIndexSet
    cols: EntityIndexSet
    a: np.ndarray
    q: float
    symmetric: bool = True

    @property
    def shape(self):
        return self.a.shape


@dataclass(frozen=True, eq=False)
class Overlap:
    """Shared row/column entities of two blocks with local position maps."""

    block_a: str
    block_b: str
    shared_rows: EntityIndexSet
    shared_cols: EntityIndexSet
    local_rows_a: np.ndarray
    local_rows_b: np.ndarray
    local_cols_a: np.ndarray
    local_cols_b: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.shared_rows)

    @property
    def n_cols(self) -> int:
        return len(self.shared_cols)

    def swapped(self) -> "Overlap":
        return Overlap(self.block_b, self.block_a, self.shared_rows, self.shared_cols,
                       self.local_rows_b, self.local_rows_a,
                       self.local_cols_b, self.local_cols_a)


def estimate_q(block: ObservedBlock) -> float:
    """Fraction of observed cells, counted over the full (square) block."""
    total = block.mask.size
    observed = int(np.count_nonzero(block.mask))
    if total == 0 or observed == 0:
        raise DataError(f"block {block.block_id!r} has no observed cells")
    return observed / total


def rescale(block: ObservedBlock) -> RescaledBlock:
    """Unbiased estimate of the population sub-block under Bernoulli sampling.

    Uses ``block.q`` if set, otherwise :func:`estimate_q`.
    """
    q = block.q if block.q is not None else estimate_q(block)
    if not q > 0:
        raise DataError(f"block {block.block_id!r}: q must be positive")
    a = np.where(block.mask, block.values / q, 0.0)
    if block.symmetric:
        # division can leave ulp-level asymmetry; eigensolvers want exact symmetry
        a = 0.5 * (a + a.T)
    return RescaledBlock(block.block_id, block.rows, block.cols, _frozen(a), float(q),
                         block.symmetric)


def _shared(a: EntityIndexSet, b: EntityIndexSet):
    shared, ia, ib = np.intersect1d(a.ids, b.ids, assume_unique=True, return_indices=True)
    return EntityIndexSet(shared), ia.astype(np.int64), ib.astype(np.int64)


def compute_overlap(a, b) -> Overlap:
    """Exact intersections of row and column entity sets of two blocks.

    Accepts any objects with ``block_id``, ``rows`` and ``cols`` attributes
    (observed blocks, rescaled blocks, embeddings).
    """
    rows, ra, rb = _shared(a.rows, b.rows)
    cols, ca, cb = _shared(a.cols, b.cols)
    return Overlap(a.block_id, b.block_id, rows, cols,
                   _frozen(ra), _frozen(rb), _frozen(ca), _frozen(cb))


def cooccurrence_to_pmi(joint, marginals, floor: Optional[float] = None) -> np.ndarray:
    """Pointwise mutual information ``log p(x,y) - log p(x) - log p(y)``.

    Cells with zero joint probability get ``floor``. By default each such
    cell gets the PMI it would have if its joint probability were the
    smallest positive one, ``log(min_pos_joint / (p(x) p(y)))``.
    """
    joint = np.asarray(joint, dtype=np.float64)
    marginals = np.asarray(marginals, dtype=np.float64)
    if joint.ndim != 2 or joint.shape[0] != joint.shape[1] or joint.shape[0] != marginals.size:
        raise DataError("joint must be k x k with k marginals")
    if np.any(marginals <= 0):
        raise DataError("marginal probabilities must be positive")
    if np.any(joint < 0):
        raise DataError("joint probabilities must be nonnegative")
    log_m = np.log(marginals)
    positive = joint > 0
    out = np.empty_like(joint)
    with np.errstate(divide="ignore"):
        out[positive] = (np.log(joint) - log_m[:, None] - log_m[None, :])[positive]
    if not np.all(positive):
        if floor is not None:
            out[~positive] = floor
        elif positive.any():
            floored = math.log(joint[positive].min()) - log_m[:, None] - log_m[None, :]
            out[~positive] = floored[~positive]
        else:
            raise DataError("joint has no positive entries; pass an explicit floor")
    return out


# --------------------------------------------------------------------------
# manifest ingestion
# --------------------------------------------------------------------------

def read_values_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a headerless CSV with ``NA`` for missing cells -> (values, mask)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"values file not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        for line_no, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            rows.append([c.strip() for c in rec])
    if not rows:
        return np.zeros((0, 0)), np.zeros((0, 0), dtype=bool)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged rows")
    mask = np.array([[c != MISSING_TOKEN for c in r] for r in rows], dtype=bool)
    values = np.zeros(mask.shape)
    for i, r in enumerate(rows):
        for j, c in enumerate(r):
            if mask[i, j]:
                try:
                    values[i, j] = float(c)
                except ValueError:
                    raise DataError(f"{path}: cannot parse {c!r} at ({i},{j})") from None
    return values, mask


def _sorted_entities(ids: Sequence[int], what: str, block_id: str):
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"block {block_id!r}: {what} must be a nonempty list")
    if np.unique(arr).size != arr.size:
        raise DataError(f"block {block_id!r}: duplicate {what} entities")
    order = np.argsort(arr, kind="stable")
    return EntityIndexSet(arr[order]), order


def load_manifest(path) -> list[ObservedBlock]:
    """Load every block listed in a JSON manifest.

    Entity lists may be given in any order; values are permuted so that the
    stored entity sets are increasing.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    entries = doc.get("blocks") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise DataError(f"manifest {path} needs a top-level 'blocks' list")
    blocks, seen = [], set()
    for entry in entries:
        try:
            block_id = str(entry["id"])
            row_ids = entry["rows"]
            values_path = entry["values"]
        except (KeyError, TypeError):
            raise DataError(f"manifest entry {entry!r} needs 'id', 'rows', 'values'") from None
        if block_id in seen:
            raise DataError(f"duplicate block id {block_id!r}")
        seen.add(block_id)
        symmetric = entry.get("cols") is None
        rows, r_order = _sorted_entities(row_ids, "row", block_id)
        if symmetric:
            cols, c_order = rows, r_order
        else:
            cols, c_order = _sorted_entities(entry["cols"], "col", block_id)
        values, mask = read_values_csv(path.parent / values_path)
        if values.shape != (len(rows), len(cols)):
            raise DataError(
                f"block {block_id!r}: values file is {values.shape[0]}x{values.shape[1]} "
                f"but {len(rows)} row and {len(cols)} col entities are declared"
            )
        values = values[np.ix_(r_order, c_order)]
        mask = mask[np.ix_(r_order, c_order)]
        q = entry.get("q")
        blocks.append(ObservedBlock(block_id, rows, values, mask,
                                    cols=None if symmetric else cols,
                                    q=None if q is None else float(q),
                                    symmetric=symmetric))
    return blocks


@dataclass
class ManifestWriter:
    """Collects blocks and writes a manifest plus one CSV per block."""

    directory: Path
    entries: list = field(default_factory=list)

    def add(self, block: ObservedBlock, q: Optional[float] = None):
        from ._io import format_float

        name = f"{block.block_id}.csv"
        lines = []
        for i in range(block.shape[0]):
            lines.append(",".join(
                format_float(block.values[i, j]) if block.mask[i, j] else MISSING_TOKEN
                for j in range(block.shape[1])))
        entry = {"id": block.block_id, "rows": block.rows.ids.tolist()}
        if not block.symmetric:
            entry["cols"] = block.cols.ids.tolist()
        entry["values"] = name
        if q is not None:
            entry["q"] = q
        self.entries.append((entry, name, "\n".join(lines) + "\n"))

    def write(self, manifest_name: str = "manifest.json") -> Path:
        from ._io import atomic_write_text

        self.directory.mkdir(parents=True, exist_ok=True)
        for _, name, text in self.entries:
            atomic_write_text(self.directory / name, text)
        doc = {"blocks": [e for e, _, _ in self.entries]}
        out = self.directory / manifest_name
        atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
        return out
