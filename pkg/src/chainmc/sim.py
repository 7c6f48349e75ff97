"""Synthetic chains and Monte-Carlo experiments.

A population matrix of exact rank ``d`` is drawn with Haar-random singular
vectors and a prescribed spectrum proportional to ``N``. ``L + 1`` square
windows of size ``n`` sit along the diagonal, consecutive windows sharing
``m`` entities. Each window is observed with its own noise and Bernoulli
mask, and the chain estimate of the (first rows x last columns) block is
compared with the truth.

Randomness comes from Philox streams keyed by ``(seed, sweep point,
replicate, purpose tag)``, so each replicate reproduces on its own,
regardless of scheduling.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.stats

from ._io import format_float
from .aggregate import aggregate
from .blocks import ObservedBlock
from .embed import Signature
from .errors import ChainMCError, DataError, SelfOverlapWarning
from .inference import (entry_stderr, normal_quantile, population_cell_variance,
                        population_variance_components, variance_components)
from .integrate import cmmi, first_order_decomposition, fit_chain

__all__ = [
    "SimConfig",
    "SimPlan",
    "Population",
    "substream",
    "haar",
    "generate_population",
    "window_starts",
    "carve_chain",
    "run_replicate",
    "run_experiment",
    "ExperimentResult",
    "InferenceStudyResult",
    "inference_study",
    "normality_study",
    "minimal_overlap_study",
    "AggregationStudyResult",
    "aggregation_study",
    "fit_loglog_slope",
    "load_plan",
]

DEFAULT_PROFILES = {
    "psd": (1.0, 0.75, 0.5),
    "indef": (1.0, 0.5, -0.5, -1.0),
    "asym": (1.0, 0.75, 0.5),
}
SWEEPABLE = ("n_total", "p", "p_breve", "overlap", "block_size", "q", "sigma", "L")
RESULT_COLUMNS = ("replicate", "N", "p", "p_breve", "q", "sigma", "L", "max_err",
                  "rel_fro", "first_order_max", "remainder_max", "wall_ms")
METRICS = ("max_err", "rel_fro", "first_order_max", "remainder_max")


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting.

    ``n_total=None`` means the windows exactly span the diagonal,
    ``N = n + L (n - m)``; ``block_size`` must then be given. ``overlap``
    and ``block_size`` override ``p_breve`` and ``p``.
    """

    n_total: Optional[int] = 600
    d: int = 3
    signature: Optional[tuple] = None
    mode: str = "psd"
    eigen_profile: Optional[tuple] = None
    p: float = 0.3
    p_breve: float = 0.1
    overlap: Optional[int] = None
    block_size: Optional[int] = None
    q: float = 0.8
    sigma: float = 0.5
    L: int = 2
    seed: int = 0
    replicates: int = 50

    def __post_init__(self):
        if self.mode not in DEFAULT_PROFILES:
            raise DataError(f"unknown mode {self.mode!r}")
        if self.mode == "indef":
            if self.signature is None:
                raise DataError("indefinite simulations need a signature")
            sig = Signature(*self.signature)
            object.__setattr__(self, "signature", (sig.d_plus, sig.d_minus))
            object.__setattr__(self, "d", sig.d)
        elif self.signature is not None:
            raise DataError(f"mode {self.mode!r} takes d, not a signature")
        if self.d < 1:
            raise DataError("d must be positive")
        prof = self.eigen_profile
        if prof is None:
            prof = DEFAULT_PROFILES[self.mode]
            if len(prof) != self.d or (self.mode == "indef" and self.signature != (2, 2)):
                raise DataError("no default eigen_profile for this rank; give one")
        prof = tuple(float(v) for v in prof)
        object.__setattr__(self, "eigen_profile", prof)
        if len(prof) != self.d:
            raise DataError(f"eigen_profile has {len(prof)} values, rank is {self.d}")
        if self.mode == "indef":
            dp, dm = self.signature
            if any(v <= 0 for v in prof[:dp]) or any(v >= 0 for v in prof[dp:]):
                raise DataError("eigen_profile signs must match the signature")
        elif any(v <= 0 for v in prof):
            raise DataError("eigen_profile must be positive")
        if not 0.0 < self.q <= 1.0:
            raise DataError(f"q must lie in (0, 1], got {self.q}")
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")
        if self.L < 0:
            raise DataError("L must be nonnegative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DataError("seed must be an unsigned 64-bit integer")
        if self.replicates < 1:
            raise DataError("replicates must be positive")
        if self.n_total is None and self.block_size is None:
            raise DataError("give n_total or block_size")
        n, m = self.n, self.m
        if n < self.d:
            raise DataError(f"block size {n} is below the rank {self.d}")
        if self.L > 0 and m < self.d:
            raise DataError(f"overlap {m} is below the rank {self.d}")
        if self.L > 0 and m >= n:
            raise DataError(f"overlap {m} must be smaller than the block size {n}")
        if n + self.L * (n - m) > self.N:
            raise DataError(
                f"layout needs {n + self.L * (n - m)} entities but N = {self.N}")

    @property
    def n(self) -> int:
        if self.block_size is not None:
            return int(self.block_size)
        return int(round(self.p * self.n_total))

    @property
    def m(self) -> int:
        if self.overlap is not None:
            return int(self.overlap)
        return int(round(self.p_breve * self.n))

    @property
    def N(self) -> int:
        if self.n_total is None:
            return self.n + self.L * (self.n - self.m)
        return int(self.n_total)

    @property
    def rank(self):
        return Signature(*self.signature) if self.mode == "indef" else self.d

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("signature", "eigen_profile"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise DataError(f"bad config: {exc}") from None


@dataclass(frozen=True)
class SimPlan:
    """A config plus what to run on it."""

    config: SimConfig
    sweep_param: Optional[str] = None
    sweep_values: tuple = ()
    study: str = "error"
    entries: tuple = ((0, 0), (0, 1), (0, 2))
    alpha: float = 0.05

    def points(self) -> list:
        if self.sweep_param is None:
            return [self.config]
        return [self.config.replace(**{self.sweep_param: v}) for v in self.sweep_values]


def load_plan(source, seed: Optional[int] = None, replicates: Optional[int] = None) -> SimPlan:
    """Parse a JSON config (path or dict).

    Besides :class:`SimConfig` fields it may hold ``sweep``
    (``{"param": name, "values": [...]}``), ``study`` (``"error"`` or
    ``"normality"``), ``entries`` and ``alpha``.
    """
    if isinstance(source, dict):
        doc = dict(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise DataError(f"config not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError("config must be a JSON object")
    sweep = doc.pop("sweep", None)
    study = doc.pop("study", "error")
    entries = doc.pop("entries", [[0, 0], [0, 1], [0, 2]])
    alpha = float(doc.pop("alpha", 0.05))
    if seed is not None:
        doc["seed"] = seed
    if replicates is not None:
        doc["replicates"] = replicates
    if study not in ("error", "normality"):
        raise DataError(f"unknown study {study!r}")
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")
    base_doc = dict(doc)
    param, values = None, ()
    if sweep is not None:
        try:
            param, values = sweep["param"], tuple(sweep["values"])
        except (KeyError, TypeError):
            raise DataError("sweep needs 'param' and 'values'") from None
        if param not in SWEEPABLE:
            raise DataError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
        if not values:
            raise DataError("sweep values are empty")
        base_doc.setdefault(param, values[0])
        base_doc[param] = values[0]
    cfg = SimConfig.from_dict(base_doc)
    plan = SimPlan(cfg, param, values, study, tuple(tuple(int(v) for v in e) for e in entries),
                   alpha)
    plan.points()  # validates every sweep point
    return plan


# --------------------------------------------------------------------------
# random streams and data generation
# --------------------------------------------------------------------------

def substream(seed: int, replicate: int, tag: str, point: int = 0) -> np.random.Generator:
    """Independent Philox stream for one (seed, point, replicate, purpose)."""
    ss = np.random.SeedSequence([int(seed), int(point), int(replicate),
                                 zlib.crc32(tag.encode())])
    return np.random.Generator(np.random.Philox(ss))


def haar(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n x d`` matrix with Haar-distributed orthonormal columns."""
    q, r = np.linalg.qr(rng.standard_normal((n, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass(frozen=True, eq=False)
class Population:
    """``P = x diag(core) y^T`` with ``y = x`` for symmetric models."""

    x: np.ndarray
    core: np.ndarray
    y: Optional[np.ndarray] = None

    def right(self) -> np.ndarray:
        return self.x if self.y is None else self.y

    def block(self, rows, cols) -> np.ndarray:
        p = (self.x[rows] * self.core) @ self.right()[cols].T
        if self.y is None and np.array_equal(rows, cols):
            p = 0.5 * (p + p.T)
        return p

    def full(self) -> np.ndarray:
        idx = np.arange(self.x.shape[0])
        return self.block(idx, idx)


def generate_population(cfg: SimConfig, rng: np.random.Generator) -> Population:
    lam = np.asarray(cfg.eigen_profile) * cfg.N
    u = haar(rng, cfg.N, cfg.d)
    root = np.sqrt(np.abs(lam))
    core = np.sign(lam) if cfg.mode == "indef" else np.ones(cfg.d)
    if cfg.mode == "asym":
        v = haar(rng, cfg.N, cfg.d)
        return Population(u * root, core, v * root)
    return Population(u * root, core)


def window_starts(cfg: SimConfig) -> list:
    return [i * (cfg.n - cfg.m) for i in range(cfg.L + 1)]


def _symmetric_draw(z: np.ndarray) -> np.ndarray:
    return np.triu(z) + np.triu(z, 1).T


def carve_chain(pop: Population, cfg: SimConfig, rng: np.random.Generator,
                sigmas: Optional[Sequence[float]] = None) -> list:
    """Observed diagonal windows with noise and Bernoulli(q) masks.

    ``sigmas`` gives per-block noise levels (default ``cfg.sigma`` for all).
    """
    blocks = []
    sym = cfg.mode != "asym"
    for i, start in enumerate(window_starts(cfg)):
        ids = np.arange(start, start + cfg.n)
        sigma = cfg.sigma if sigmas is None else sigmas[i % len(sigmas)]
        noise = rng.standard_normal((cfg.n, cfg.n))
        mask = rng.random((cfg.n, cfg.n)) < cfg.q
        if sym:
            noise = _symmetric_draw(noise)
            mask = _symmetric_draw(mask.astype(np.int8)).astype(bool)
        values = pop.block(ids, ids) + sigma * noise
        blocks.append(ObservedBlock(str(i), ids, values, mask,
                                    cols=None if sym else ids, q=cfg.q, symmetric=sym))
    return blocks


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def run_replicate(cfg: SimConfig, replicate: int, point: int = 0) -> dict:
    """Metrics of one replicate; estimation failures are recorded, not raised."""
    rec = {"replicate": replicate, "point": point, "N": cfg.N, "p": cfg.n / cfg.N,
           "p_breve": cfg.m / cfg.n, "q": cfg.q, "sigma": cfg.sigma, "L": cfg.L,
           "error": ""}
    t0 = time.perf_counter()
    pop = generate_population(cfg, substream(cfg.seed, replicate, "population", point))
    blocks = carve_chain(pop, cfg, substream(cfg.seed, replicate, "observation", point))
    try:
        fit = fit_chain(blocks, cfg.mode, cfg.rank)
    except ChainMCError as exc:
        rec.update({k: math.nan for k in METRICS})
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        return rec
    est = fit.estimate()
    rows, cols = fit.blocks[0].rows.ids, fit.blocks[-1].cols.ids
    truth = pop.block(rows, cols)
    err = est - truth
    e_first = fit.blocks[0].a - pop.block(rows, fit.blocks[0].cols.ids)
    e_last = fit.blocks[-1].a - pop.block(fit.blocks[-1].rows.ids, cols)
    m_star, rem = first_order_decomposition(fit, pop.x, e_first, e_last, y=pop.y,
                                            core=pop.core)
    rec.update({
        "max_err": float(np.max(np.abs(err))),
        "rel_fro": float(np.linalg.norm(err) / np.linalg.norm(truth)),
        "first_order_max": float(np.max(np.abs(m_star))),
        "remainder_max": float(np.max(np.abs(rem))),
        "wall_ms": 1e3 * (time.perf_counter() - t0),
    })
    return rec


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


@dataclass(eq=False)
class ExperimentResult:
    """Per-replicate records, ordered by (sweep point, replicate)."""

    records: list
    configs: list
    sweep_param: Optional[str] = None

    @property
    def failures(self) -> list:
        return [r for r in self.records if r["error"]]

    def metric(self, name: str, point: int = 0) -> np.ndarray:
        return np.array([r[name] for r in self.records if r["point"] == point])

    def median(self, name: str) -> np.ndarray:
        """Median of ``name`` at each sweep point, ignoring failed replicates."""
        return np.array([np.nanmedian(self.metric(name, k)) for k in range(len(self.configs))])

    def sweep_values(self) -> list:
        if self.sweep_param is None:
            return [self.configs[0].N]
        return [getattr(c, self.sweep_param) for c in self.configs]

    def to_csv(self, timing: bool = False) -> str:
        lines = [",".join(RESULT_COLUMNS)]
        for r in self.records:
            cells = []
            for c in RESULT_COLUMNS:
                v = r[c]
                if c == "wall_ms" and not timing:
                    cells.append("NA")
                elif c in ("replicate", "N", "L"):
                    cells.append(str(int(v)))
                else:
                    cells.append(format_float(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        head = ["point", "N", "n", "m", "L", "q", "sigma", "replicates", "failures"]
        head += [f"median_{m}" for m in METRICS] + ["mean_max_err"]
        lines = [",".join(head)]
        for k, c in enumerate(self.configs):
            recs = [r for r in self.records if r["point"] == k]
            vals = self.metric("max_err", k)
            row = [str(k), str(c.N), str(c.n), str(c.m), str(c.L), format_float(c.q),
                   format_float(c.sigma), str(len(recs)),
                   str(sum(1 for r in recs if r["error"]))]
            row += [format_float(np.nanmedian(self.metric(m, k))) for m in METRICS]
            row.append(format_float(np.nanmean(vals)))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def run_experiment(cfg, threads: int = 1, sweep_param: Optional[str] = None,
                   sweep_values: Sequence = ()) -> ExperimentResult:
    """Run every replicate of ``cfg`` (or of each sweep point).

    ``cfg`` may also be a :class:`SimPlan`, whose sweep is then used.
    """
    if isinstance(cfg, SimPlan):
        configs = cfg.points()
        sweep_param = cfg.sweep_param
    elif sweep_param is not None:
        configs = [cfg.replace(**{sweep_param: v}) for v in sweep_values]
    else:
        configs = [cfg]
    jobs = [(k, c, r) for k, c in enumerate(configs) for r in range(c.replicates)]
    records = _map(lambda job: run_replicate(job[1], job[2], job[0]), jobs, threads)
    return ExperimentResult(records, configs, sweep_param)


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise DataError("log-log fit needs at least two positive points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def minimal_overlap_study(cfg: SimConfig, sizes: Sequence[int] = (50, 100, 200, 400, 800),
                          threads: int = 1) -> ExperimentResult:
    """Sweep the block size with the overlap pinned at the rank.

    Windows span the diagonal, so ``N = n + L (n - d)``.
    """
    base = cfg.replace(n_total=None, overlap=cfg.d, block_size=int(sizes[0]))
    return run_experiment(base, threads, "block_size", [int(s) for s in sizes])


# --------------------------------------------------------------------------
# inference studies
# --------------------------------------------------------------------------

@dataclass(eq=False)
class InferenceStudyResult:
    """Standardized errors and interval coverage at fixed entries.

    ``z`` uses the population standard deviation; ``covered`` uses plug-in
    intervals. Both are ``replicates x entries``. ``degenerate`` flags a
    zero population deviation, in which case ``z`` is NaN.
    """

    entries: tuple
    estimate: np.ndarray
    truth: np.ndarray
    se_population: np.ndarray
    se_plugin: np.ndarray
    z: np.ndarray
    covered: np.ndarray
    alpha: float
    degenerate: bool
    errors: list = field(default_factory=list)

    def ks(self, k: int):
        """Kolmogorov-Smirnov test of column ``k`` of ``z`` against N(0, 1)."""
        z = self.z[:, k]
        z = z[np.isfinite(z)]
        res = scipy.stats.kstest(z, "norm")
        return float(res.statistic), float(res.pvalue)

    def coverage(self, k: int) -> float:
        c = self.covered[:, k]
        return float(np.mean(c[np.isfinite(self.estimate[:, k])]))

    def summary_csv(self) -> str:
        lines = ["s,t,mean,variance,ks_stat,ks_p,coverage,median_se_ratio"]
        for k, (s, t) in enumerate(self.entries):
            z = self.z[:, k][np.isfinite(self.z[:, k])]
            if self.degenerate or z.size < 2:
                stats = ["NA"] * 4
            else:
                stat, p = self.ks(k)
                stats = [format_float(z.mean()), format_float(z.var(ddof=1)),
                         format_float(stat), format_float(p)]
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = self.se_plugin[:, k] / self.se_population[:, k]
                med = np.nanmedian(ratio) if np.any(np.isfinite(ratio)) else math.nan
            lines.append(",".join([str(s), str(t)] + stats +
                                  [format_float(self.coverage(k)), format_float(med)]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["replicate,s,t,estimate,truth,se_population,se_plugin,z,covered"]
        for r in range(self.estimate.shape[0]):
            for k, (s, t) in enumerate(self.entries):
                lines.append(",".join([
                    str(r), str(s), str(t), format_float(self.estimate[r, k]),
                    format_float(self.truth[r, k]), format_float(self.se_population[r, k]),
                    format_float(self.se_plugin[r, k]), format_float(self.z[r, k]),
                    str(int(self.covered[r, k]))]))
        return "\n".join(lines) + "\n"


def _inference_replicate(cfg: SimConfig, replicate: int, entries, z_crit: float):
    k = len(entries)
    out = np.full((5, k), np.nan)
    pop = generate_population(cfg, substream(cfg.seed, replicate, "population"))
    blocks = carve_chain(pop, cfg, substream(cfg.seed, replicate, "observation"))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SelfOverlapWarning)
            fit = fit_chain(blocks, cfg.mode, cfg.rank)
            vc_hat = variance_components(fit)
    except ChainMCError as exc:
        return out, f"replicate {replicate}: {exc}"
    b0, bl = fit.blocks[0], fit.blocks[-1]
    r0, cl = b0.rows.ids, bl.cols.ids
    noise_var = cfg.sigma ** 2
    d0 = population_cell_variance(pop.block(r0, b0.cols.ids), noise_var, cfg.q)
    dl = population_cell_variance(pop.block(bl.rows.ids, cl), noise_var, cfg.q)
    y = pop.right()
    vc = population_variance_components(pop.x[r0], pop.x[bl.rows.ids], d0, dl,
                                        y[b0.cols.ids], y[cl])
    est = fit.estimate()
    for j, (s, t) in enumerate(entries):
        truth = float((pop.x[r0[s]] * pop.core) @ y[cl[t]])
        out[0, j] = est[s, t]
        out[1, j] = truth
        out[2, j] = entry_stderr(vc, s, t)
        out[3, j] = entry_stderr(vc_hat, s, t)
        out[4, j] = abs(est[s, t] - truth) <= z_crit * out[3, j]
    return out, ""


def inference_study(cfg: SimConfig, entries=((0, 0), (0, 1), (0, 2)), alpha: float = 0.05,
                    threads: int = 1) -> InferenceStudyResult:
    """Repeat the chain estimate and standardize it at fixed local entries."""
    entries = tuple(tuple(int(v) for v in e) for e in entries)
    for s, t in entries:
        if not (0 <= s < cfg.n and 0 <= t < cfg.n):
            raise DataError(f"entry ({s}, {t}) lies outside the {cfg.n} x {cfg.n} target")
    z_crit = normal_quantile(1.0 - alpha / 2.0)
    res = _map(lambda r: _inference_replicate(cfg, r, entries, z_crit),
               range(cfg.replicates), threads)
    arr = np.stack([a for a, _ in res])
    est, truth, se_pop, se_hat, cov = (arr[:, i, :] for i in range(5))
    degenerate = bool(np.all(se_pop[np.isfinite(se_pop)] == 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(se_pop > 0, (est - truth) / se_pop, np.nan)
    return InferenceStudyResult(entries, est, truth, se_pop, se_hat, z, cov, alpha,
                                degenerate, [e for _, e in res if e])


def normality_study(cfg: SimConfig, entries=((0, 0), (0, 1), (0, 2)),
                    threads: int = 1) -> InferenceStudyResult:
    """Alias of :func:`inference_study` at the 95% level."""
    return inference_study(cfg, entries, 0.05, threads)


# --------------------------------------------------------------------------
# aggregation study
# --------------------------------------------------------------------------

@dataclass(eq=False)
class AggregationStudyResult:
    pre_max_err: np.ndarray
    post_max_err: np.ndarray
    fused_variance: float
    optimal_variance: float
    sigma2_hat: np.ndarray


def aggregation_study(cfg: SimConfig, sigmas: Sequence[float] = (0.2, 1.0),
                      threads: int = 1) -> AggregationStudyResult:
    """Chain error before and after fusing the sources' shared cells.

    Block ``i`` carries noise level ``sigmas[i]``. The fused-cell variance
    is the mean squared error of fused values, pooled over every shared
    cell observed by both sources across replicates.
    """
    if cfg.L != 1 or len(sigmas) != 2:
        raise DataError("aggregation study needs two sources (L = 1) and two noise levels")
    if cfg.mode == "asym":
        raise DataError("aggregation study runs on symmetric layouts")

    def one(r):
        pop = generate_population(cfg, substream(cfg.seed, r, "population"))
        raw = [b.with_q(None) for b in
               carve_chain(pop, cfg, substream(cfg.seed, r, "observation"), sigmas)]
        pre = cmmi(raw, cfg.mode, cfg.rank)
        fused_blocks, noise = aggregate(raw, cfg.d)
        post = cmmi(fused_blocks, cfg.mode, cfg.rank)
        truth = pop.block(pre.rows.ids, pre.cols.ids)
        shared = np.intersect1d(raw[0].rows.ids, raw[1].rows.ids)
        both = np.ones((shared.size, shared.size), dtype=bool)
        for b in raw:
            pos = b.rows.positions(shared)
            both &= b.mask[np.ix_(pos, pos)]
        fb = fused_blocks[0]
        pos = fb.rows.positions(shared)
        resid = (fb.values[np.ix_(pos, pos)] - pop.block(shared, shared))
        iu = np.triu_indices(shared.size)
        keep = both[iu]
        return (float(np.max(np.abs(pre.estimate - truth))),
                float(np.max(np.abs(post.estimate - truth))),
                resid[iu][keep], [n.sigma2_hat for n in noise])

    res = _map(one, range(cfg.replicates), threads)
    pooled = np.concatenate([r[2] for r in res])
    optimal = 1.0 / sum(1.0 / s ** 2 for s in sigmas)
    return AggregationStudyResult(np.array([r[0] for r in res]), np.array([r[1] for r in res]),
                                  float(np.mean(pooled ** 2)), optimal,
                                  np.array([r[3] for r in res]))
