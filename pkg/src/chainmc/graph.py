"""The overlap graph: recoverability, chain selection and holistic recovery.

Blocks are vertices; two blocks are joined when they share at least
``threshold`` entities, with edge weight ``c_i + c_j`` (sum of residual
scores). Block ids are ordered numerically when they are all digits and
lexicographically otherwise; every tie in this module is broken by that
order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .align import align_pair
from .blocks import EntityIndexSet, compute_overlap
from .embed import ResidualScore
from .errors import DataError
from .integrate import EmbeddingCache, _as_rescaled

__all__ = [
    "block_sort_key",
    "Edge",
    "OverlapGraph",
    "build_graph",
    "RecoverabilityMask",
    "recoverability",
    "select_chain",
    "kruskal_mst",
    "HolisticResult",
    "holistic_recover",
]


def block_sort_key(block_id: str):
    s = str(block_id)
    return (0, int(s), s) if s.isdigit() else (1, 0, s)


@dataclass(frozen=True)
class Edge:
    i: str
    j: str
    overlap: int
    weight: float


@dataclass(eq=False)
class OverlapGraph:
    vertices: list
    rows: dict
    cols: dict
    scores: dict
    edges: list
    threshold: int
    adjacency: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = {v: [] for v in self.vertices}
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        for v in adj:
            adj[v].sort(key=block_sort_key)
        self.adjacency = adj

    def entities(self, v: str) -> EntityIndexSet:
        return self.rows[v].union(self.cols[v])

    def has_edge(self, i: str, j: str) -> bool:
        return j in self.adjacency.get(i, ())


def _score_map(scores) -> dict:
    if isinstance(scores, dict):
        return {str(k): float(v) for k, v in scores.items()}
    out = {}
    for s in scores:
        if isinstance(s, ResidualScore):
            out[s.block_id] = float(s.c)
        else:
            k, v = s
            out[str(k)] = float(v)
    return out


def build_graph(blocks: Sequence, scores, threshold: int) -> OverlapGraph:
    """Overlap graph over ``blocks``.

    ``blocks`` are any objects with ``block_id``, ``rows`` and ``cols``.
    For rectangular blocks the overlap size is the larger of the shared
    row and shared column counts.
    """
    if threshold < 1:
        raise DataError(f"threshold must be >= 1, got {threshold}")
    score = _score_map(scores)
    by_id = {}
    for b in blocks:
        if b.block_id in by_id:
            raise DataError(f"duplicate block id {b.block_id!r}")
        if b.block_id not in score:
            raise DataError(f"no residual score for block {b.block_id!r}")
        if score[b.block_id] < 0:
            raise DataError(f"negative residual score for block {b.block_id!r}")
        by_id[b.block_id] = b
    vertices = sorted(by_id, key=block_sort_key)
    edges = []
    for a_pos, i in enumerate(vertices):
        for j in vertices[a_pos + 1:]:
            ov = compute_overlap(by_id[i], by_id[j])
            size = max(ov.n_rows, ov.n_cols)
            if size >= threshold:
                edges.append(Edge(i, j, size, score[i] + score[j]))
    return OverlapGraph(vertices, {v: by_id[v].rows for v in vertices},
                        {v: by_id[v].cols for v in vertices},
                        {v: score[v] for v in vertices}, edges, threshold)


@dataclass(eq=False)
class RecoverabilityMask:
    """Connected components of the overlap graph and their entity unions."""

    components: list
    members: list

    def component_of(self, block_id: str) -> int:
        for f, m in enumerate(self.members):
            if block_id in m:
                return f
        raise DataError(f"unknown block {block_id!r}")

    def components_with(self, entity: int) -> list:
        return [f for f, c in enumerate(self.components) if entity in c]

    def entry(self, s: int, t: int) -> bool:
        return any(s in c and t in c for c in self.components)

    def dense(self, n_total: Optional[int] = None) -> np.ndarray:
        top = max((int(c.ids[-1]) for c in self.components if len(c)), default=-1)
        n = top + 1 if n_total is None else n_total
        out = np.zeros((n, n), dtype=bool)
        for c in self.components:
            out[np.ix_(c.ids, c.ids)] = True
        return out

    def to_csv(self) -> str:
        pairs = sorted((int(e), f) for f, c in enumerate(self.components) for e in c.ids)
        return "entity,component\n" + "".join(f"{e},{f}\n" for e, f in pairs)


def _components(g: OverlapGraph) -> list:
    seen, comps = set(), []
    for start in g.vertices:
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in reversed(g.adjacency[v]):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(sorted(comp, key=block_sort_key))
    return comps


def recoverability(g: OverlapGraph) -> RecoverabilityMask:
    """Entries ``(s, t)`` are recoverable when one component covers both."""
    members = _components(g)
    unions = []
    for comp in members:
        ids = np.unique(np.concatenate([g.entities(v).ids for v in comp]))
        unions.append(EntityIndexSet(ids))
    return RecoverabilityMask(unions, [set(m) for m in members])


def _bfs_path(g: OverlapGraph, src: str, dst: str) -> list:
    prev = {src: None}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        if v == dst:
            break
        for w in g.adjacency[v]:
            if w not in prev:
                prev[w] = v
                queue.append(w)
    if dst not in prev:
        raise DataError(f"no path between {src!r} and {dst!r}")
    path, v = [], dst
    while v is not None:
        path.append(v)
        v = prev[v]
    return path[::-1]


def select_chain(g: OverlapGraph, s: int, t: int,
                 mask: Optional[RecoverabilityMask] = None) -> list:
    """Chain for entry ``(s, t)``.

    Endpoints minimise ``c_i + c_j`` over blocks holding ``s`` (rows) and
    ``t`` (columns) that lie in one component; the interior is a BFS
    shortest path.
    """
    mask = recoverability(g) if mask is None else mask
    b_s = [v for v in g.vertices if s in g.rows[v]]
    b_t = [v for v in g.vertices if t in g.cols[v]]
    if not b_s or not b_t:
        missing = s if not b_s else t
        raise DataError(f"entity {missing} is not covered by any block")
    comp = {v: mask.component_of(v) for v in set(b_s) | set(b_t)}
    best = None
    for i in b_s:
        for j in b_t:
            if comp[i] != comp[j]:
                continue
            key = (g.scores[i] + g.scores[j], block_sort_key(i), block_sort_key(j))
            if best is None or key < best[0]:
                best = (key, i, j)
    if best is None:
        parts = "; ".join(f"component {f}: blocks {sorted(m, key=block_sort_key)}"
                          for f, m in enumerate(mask.members))
        raise DataError(f"entry ({s}, {t}) is not recoverable ({parts})")
    _, i0, il = best
    return [i0] if i0 == il else _bfs_path(g, i0, il)


class _UnionFind:
    def __init__(self, items):
        self.parent = {v: v for v in items}

    def find(self, v):
        root = v
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[v] != root:
            self.parent[v], v = root, self.parent[v]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def kruskal_mst(g: OverlapGraph) -> list:
    """Minimum spanning forest; edges sorted by (weight, i, j)."""
    uf = _UnionFind(g.vertices)
    order = sorted(g.edges, key=lambda e: (e.weight, block_sort_key(e.i), block_sort_key(e.j)))
    return [e for e in order if uf.union(e.i, e.j)]


@dataclass(eq=False)
class HolisticResult:
    """Aligned positions for every covered entity and the implied matrix.

    ``x`` (and ``y`` for rectangular data) are indexed by entity id with NaN
    rows for uncovered entities. ``estimate`` is NaN wherever no component
    covers both entities. ``x`` holds the frame of the first component; the
    per-component frames are kept in ``component_x``.
    """

    x: np.ndarray
    y: Optional[np.ndarray]
    estimate: np.ndarray
    roots: list
    tree: list
    component_x: list
    component_y: list


def _tree_children(tree: list, vertices: list) -> dict:
    adj = {v: [] for v in vertices}
    for e in tree:
        adj[e.i].append(e.j)
        adj[e.j].append(e.i)
    for v in adj:
        adj[v].sort(key=block_sort_key)
    return adj


def holistic_recover(g: OverlapGraph, blocks: Sequence, mode: str, rank,
                     cache: Optional[EmbeddingCache] = None) -> HolisticResult:
    """Align every block into one frame per component along the MST.

    Each component is rooted at its lowest-score block. Rows are written in
    descending score order so the lowest-score block's coordinates win
    wherever blocks disagree.
    """
    if not g.vertices:
        raise DataError("empty overlap graph")
    rescaled = {b.block_id: b for b in _as_rescaled(blocks)}
    missing = [v for v in g.vertices if v not in rescaled]
    if missing:
        raise DataError(f"graph vertices without data: {missing}")
    cache = EmbeddingCache() if cache is None else cache
    emb = {v: cache.get(rescaled[v], mode, rank) for v in g.vertices}
    d = emb[g.vertices[0]].d
    asym = mode == "asym"
    n_rows = 1 + max(int(g.rows[v].ids[-1]) for v in g.vertices)
    n_cols = 1 + max(int(g.cols[v].ids[-1]) for v in g.vertices)
    tree = kruskal_mst(g)
    adj = _tree_children(tree, g.vertices)
    estimate = np.full((n_rows, n_cols), np.nan)
    written = np.zeros((n_rows, n_cols), dtype=bool)
    roots, comp_x, comp_y = [], [], []
    for comp in _components(g):
        root = min(comp, key=lambda v: (g.scores[v], block_sort_key(v)))
        roots.append(root)
        to_root = {root: np.eye(d)}
        queue = deque([root])
        while queue:
            p = queue.popleft()
            for v in adj[p]:
                if v not in to_root:
                    step = align_pair(emb[v], emb[p])
                    to_root[v] = step.w @ to_root[p]
                    queue.append(v)
        x = np.full((n_rows, d), np.nan)
        y = np.full((n_cols, d), np.nan) if asym else None
        covered_r = np.zeros(n_rows, dtype=bool)
        covered_c = np.zeros(n_cols, dtype=bool)
        order = sorted(comp, key=lambda v: (g.scores[v], block_sort_key(v)), reverse=True)
        for v in order:
            w = to_root[v]
            x[emb[v].rows.ids] = emb[v].x @ w
            covered_r[emb[v].rows.ids] = True
            if asym:
                y[emb[v].cols.ids] = emb[v].y @ np.linalg.inv(w).T
                covered_c[emb[v].cols.ids] = True
        if asym:
            rr, cc = np.flatnonzero(covered_r), np.flatnonzero(covered_c)
            block = x[rr] @ y[cc].T
        else:
            rr = cc = np.flatnonzero(covered_r)
            block = (x[rr] * emb[root].core) @ x[rr].T
        cells = np.ix_(rr, cc)
        fresh = ~written[cells]
        target = estimate[cells]
        target[fresh] = block[fresh]
        estimate[cells] = target
        written[cells] = True
        comp_x.append(x)
        comp_y.append(y)
    return HolisticResult(comp_x[0], comp_y[0], estimate, roots, tree, comp_x, comp_y)
