"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line, repeated in the
terminal summary. Seeds equal the criterion number and were fixed before
any run.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from chainmc.align import procrustes
from chainmc.blocks import ManifestWriter, ObservedBlock, rescale
from chainmc.cli import main
from chainmc.embed import Signature, embed
from chainmc.graph import Edge, OverlapGraph, kruskal_mst
from chainmc.inference import VarianceComponents, entry_stderr, stderr_matrix
from chainmc.integrate import cmmi_asymmetric
from chainmc.sim import (
    SimConfig, aggregation_study, fit_loglog_slope, generate_population,
    inference_study, minimal_overlap_study, run_experiment, run_replicate, substream,
)

from helpers import diagonal_windows, full_block, noisy_block, psd_model

pytestmark = pytest.mark.slow


def _log(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


# 1. noiseless exactness

def _rows_only_asym_error(seed):
    cfg = SimConfig(n_total=None, block_size=200, overlap=20, L=5, q=1.0, sigma=0.0,
                    mode="asym", seed=seed)
    pop = generate_population(cfg, substream(seed, 0, "population"))
    starts = [i * 180 for i in range(6)]
    rows = [np.arange(s, s + 200) for s in starts]
    cols = list(rows)
    # block 3 shares rows with block 2 but no columns
    cols[3] = np.arange(700, 900)
    assert np.intersect1d(cols[2], cols[3]).size == 0
    blocks = [ObservedBlock(str(k), r, pop.block(r, c), np.ones((200, 200), bool), cols=c,
                            q=1.0, symmetric=False)
              for k, (r, c) in enumerate(zip(rows, cols))]
    rec = cmmi_asymmetric(blocks, 3)
    return float(np.max(np.abs(rec.estimate - pop.block(rows[0], cols[-1]))))


def test_criterion_1_noiseless_exactness(verdict):
    t0 = time.perf_counter()
    base = dict(n_total=None, block_size=200, overlap=20, L=5, q=1.0, sigma=0.0, seed=1,
                replicates=1)
    errors = {
        "psd": run_replicate(SimConfig(**base), 0)["max_err"],
        "indef": run_replicate(SimConfig(mode="indef", signature=(2, 2), **base), 0)["max_err"],
        "asym": run_replicate(SimConfig(mode="asym", **base), 0)["max_err"],
        "asym_rows_only": _rows_only_asym_error(1),
    }
    wall = time.perf_counter() - t0
    ok = all(e < 1e-8 for e in errors.values()) and wall < 10.0
    detail = " ".join(f"{k}={v:.2e}" for k, v in errors.items()) + f" wall={wall:.1f}s"
    assert verdict(1, ok, detail), detail


# 2 and 4 share one sweep

@pytest.fixture(scope="module")
def scaling_sweep():
    cfg = SimConfig(n_total=300, p=0.3, p_breve=0.1, q=0.8, L=2, sigma=0.5, seed=2,
                    replicates=50)
    t0 = time.perf_counter()
    res = run_experiment(cfg, sweep_param="n_total", sweep_values=[300, 600, 1200, 2400])
    return res, time.perf_counter() - t0


def test_criterion_2_scaling_slope(verdict, scaling_sweep):
    res, wall = scaling_sweep
    med = res.median("max_err")
    slope = fit_loglog_slope(res.sweep_values(), med)
    ok = -0.65 <= slope <= -0.35 and wall < 600 and not res.failures
    detail = f"slope={slope:.3f} medians={_log(med)} wall={wall:.0f}s"
    assert verdict(2, ok, detail), detail


def test_criterion_3_chain_length(verdict):
    cfg = SimConfig(n_total=600, p=0.15, p_breve=0.1, q=0.8, sigma=0.5, seed=3,
                    replicates=50)
    res = run_experiment(cfg, sweep_param="L", sweep_values=[1, 2, 3, 4, 5, 6])
    med = res.median("max_err")
    ratio = med[-1] / med[0]
    ok = ratio <= 2.0 and not res.failures
    detail = f"ratio L6/L1={ratio:.3f} medians={_log(med)}"
    assert verdict(3, ok, detail), detail


def test_criterion_4_first_order_dominance(verdict, scaling_sweep):
    res, _ = scaling_sweep
    first, rem = res.median("first_order_max"), res.median("remainder_max")
    ok = bool(np.all(rem < first))
    detail = f"first_order={_log(first)} remainder={_log(rem)}"
    assert verdict(4, ok, detail), detail


def test_criterion_5_normality(verdict):
    cfg = SimConfig(n_total=1200, p=0.3, p_breve=0.1, q=0.8, L=2, sigma=0.5, seed=5,
                    replicates=1000)
    t0 = time.perf_counter()
    res = inference_study(cfg)
    wall = time.perf_counter() - t0
    parts, ok = [], not res.degenerate and wall < 900
    for k, entry in enumerate(res.entries):
        z = res.z[:, k][np.isfinite(res.z[:, k])]
        mean, var = z.mean(), z.var(ddof=1)
        _, p = res.ks(k)
        ok &= abs(mean) < 0.1 and 0.8 <= var <= 1.25 and p > 0.01 and z.size == 1000
        parts.append(f"{entry}: mean={mean:.3f} var={var:.3f} ks_p={p:.3f}")
    detail = "; ".join(parts) + f" wall={wall:.0f}s"
    assert verdict(5, ok, detail), detail


def test_criterion_6_minimal_overlap(verdict):
    cfg = SimConfig(L=2, q=0.8, sigma=0.5, seed=6, replicates=100)
    sizes = [50, 100, 200, 400, 800]
    res = minimal_overlap_study(cfg, sizes)
    med = res.median("max_err")
    slope = fit_loglog_slope(sizes, med)
    ok = not res.failures and -0.7 <= slope <= -0.3
    detail = f"slope={slope:.3f} failures={len(res.failures)} medians={_log(med)}"
    assert verdict(6, ok, detail), detail


def test_criterion_7_ci_coverage(verdict):
    cfg = SimConfig(n_total=1200, p=0.3, p_breve=0.1, q=0.8, L=2, sigma=0.5, seed=7,
                    replicates=500)
    res = inference_study(cfg, entries=((0, 1),), alpha=0.05)
    cov = res.coverage(0)
    ok = 0.90 <= cov <= 0.98 and not res.errors
    detail = f"coverage={cov:.3f} over {res.covered.shape[0]} replicates"
    assert verdict(7, ok, detail), detail


def test_criterion_8_aggregation(verdict):
    # two sources sharing half of each block; every cell observed
    cfg = SimConfig(n_total=600, p=2 / 3, p_breve=0.5, L=1, q=1.0, sigma=0.5, seed=8,
                    replicates=50)
    res = aggregation_study(cfg, sigmas=(0.2, 1.0))
    pre, post = np.median(res.pre_max_err), np.median(res.post_max_err)
    ok = post <= pre and res.fused_variance <= 1.05 * res.optimal_variance
    detail = (f"median pre={pre:.4f} post={post:.4f} fused_var={res.fused_variance:.5f} "
              f"optimal={res.optimal_variance:.5f}")
    assert verdict(8, ok, detail), detail


# 9. oracle equivalences

def _procrustes_gap(rng, d):
    a = rng.standard_normal((12, d))
    b = a @ np.linalg.qr(rng.standard_normal((d, d)))[0] + 0.3 * rng.standard_normal((12, d))
    got = np.linalg.norm(a @ procrustes(a, b) - b)
    if d == 2:
        theta = np.arange(0.0, 2 * np.pi, 1e-4)
        c, s = np.cos(theta), np.sin(theta)
        best = np.inf
        for flip in (1.0, -1.0):
            rots = np.stack([np.stack([c, -s * flip], -1), np.stack([s, c * flip], -1)], -2)
            best = min(best, np.linalg.norm(a @ rots - b, axis=(1, 2)).min())
    else:
        step = np.deg2rad(3.0)
        grid = np.array(list(itertools.product(np.arange(-np.pi, np.pi, step),
                                               np.arange(-np.pi / 2, np.pi / 2 + 1e-9, step),
                                               np.arange(-np.pi, np.pi, step))))
        mats = Rotation.from_euler("ZYX", grid).as_matrix()
        mats = np.concatenate([mats, -mats])
        best = np.linalg.norm(a @ mats - b, axis=(1, 2)).min()
    return got - best


def _sign_fixed(u):
    pick = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    return np.where(pick < 0, -1.0, 1.0)


def _embedding_gap(rng):
    # positions and Gram against a full decomposition truncated by hand
    gaps = []
    n = 30
    for mode, rank in (("psd", 3), ("indef", Signature(2, 1)), ("asym", 3)):
        if mode == "asym":
            a = rng.standard_normal((n, n + 5))
            u, s, vt = np.linalg.svd(a, full_matrices=False)
            sign = _sign_fixed(u[:, :3])
            x = u[:, :3] * sign * np.sqrt(s[:3])
            y = vt[:3].T * sign * np.sqrt(s[:3])
            oracle = x @ y.T
            block = ObservedBlock("a", np.arange(n), a, np.ones(a.shape, bool),
                                  cols=np.arange(n + 5), symmetric=False)
        else:
            z = rng.standard_normal((n, n))
            a = z + z.T + (20 * np.eye(n) if mode == "psd" else 0.0)
            w, v = np.linalg.eigh(a)
            keep = [n - 1, n - 2, n - 3] if mode == "psd" else [n - 1, n - 2, 0]
            x = v[:, keep] * _sign_fixed(v[:, keep]) * np.sqrt(np.abs(w[keep]))
            y = None
            oracle = (v[:, keep] * w[keep]) @ v[:, keep].T
            block = ObservedBlock("a", np.arange(n), a, np.ones(a.shape, bool))
        e = embed(rescale(block), mode, rank)
        scale = np.abs(oracle).max()
        gaps.append(np.abs(e.gram() - oracle).max() / scale)
        gaps.append(np.abs(e.x - x).max() / math.sqrt(scale))
        if y is not None:
            gaps.append(np.abs(e.y - y).max() / math.sqrt(scale))
    return max(gaps)


def _mst_mismatches(rng):
    bad = 0
    for _ in range(50):
        n = int(rng.integers(2, 8))
        pairs = list(itertools.combinations(range(n), 2))
        chosen = sorted({(v, v + 1) for v in range(n - 1)}
                        | {p for p in pairs if rng.random() < 0.5})
        edges = [(i, j, float(rng.integers(0, 20)) / 4) for i, j in chosen]
        vertices = [str(v) for v in range(n)]
        empty = {v: None for v in vertices}
        g = OverlapGraph(vertices, empty, empty, {v: 0.0 for v in vertices},
                         [Edge(str(i), str(j), 1, w) for i, j, w in edges], 1)
        got = sum(e.weight for e in kruskal_mst(g))
        best = math.inf
        for combo in itertools.combinations(edges, n - 1):
            comp = list(range(n))
            for i, j, _ in combo:
                ci, cj = comp[i], comp[j]
                comp = [ci if c == cj else c for c in comp]
            if len(set(comp)) == 1:
                best = min(best, sum(w for _, _, w in combo))
        bad += got != best
    return bad


def _stderr_gap(rng):
    worst = 0.0
    for _ in range(20):
        n0, nl = rng.integers(1, 9, size=2)
        vc = VarianceComponents(rng.standard_normal((n0, nl)), rng.standard_normal((nl, n0)),
                                rng.random((n0, n0)), rng.random((nl, nl)))
        full = stderr_matrix(vc)
        for s in range(n0):
            for t in range(nl):
                ref = math.sqrt(sum(vc.b_fwd[k, t] ** 2 * vc.d_first[s, k] for k in range(n0))
                                + sum(vc.b_bwd[k, s] ** 2 * vc.d_last[k, t]
                                      for k in range(nl)))
                worst = max(worst, abs(entry_stderr(vc, s, t) - ref) / ref,
                            abs(full[s, t] - ref) / ref)
    return worst


def test_criterion_9_oracle_equivalences(verdict):
    rng = np.random.default_rng(9)
    gap2 = max(_procrustes_gap(rng, 2) for _ in range(5))
    gap3 = max(_procrustes_gap(rng, 3) for _ in range(3))
    emb = _embedding_gap(rng)
    mst = _mst_mismatches(rng)
    sig = _stderr_gap(rng)
    ok = gap2 <= 1e-6 and gap3 <= 1e-6 and emb <= 1e-10 and mst == 0 and sig <= 1e-12
    detail = (f"procrustes O(2) gap={gap2:.2e} O(3) gap={gap3:.2e} embedding={emb:.1e} "
              f"mst_mismatches={mst} stderr_rel={sig:.1e}")
    assert verdict(9, ok, detail), detail


# 10. CLI determinism

def test_criterion_10_cli_determinism(verdict, tmp_path, capsys):
    rng = np.random.default_rng(10)
    p, _ = psd_model(rng, 80, [40.0, 20.0])
    w = ManifestWriter(tmp_path / "data")
    for k, rows in enumerate(diagonal_windows(40, 20, 3)):
        w.add(noisy_block(rng, k, p, rows, 0.2, 0.9))
    w.add(full_block("iso", p, np.arange(70, 80)))
    manifest = str(w.write())
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"n_total": 200, "p": 0.3, "p_breve": 0.5, "replicates": 3}')
    common = ["--manifest", manifest, "--rank", "2"]
    runs = {
        "embed": ["embed", *common, "--out", "{o}"],
        "integrate": ["integrate", *common, "--chain", "0,1,2", "--ci", "0.05",
                      "--out", "{o}/r.csv"],
        "recoverable": ["recoverable", *common, "--out", "{o}/c.csv"],
        "chain": ["chain", *common, "--entry", "0,70", "--recover", "--ci", "0.1",
                  "--out", "{o}/r.csv"],
        "holistic": ["holistic", *common, "--out", "{o}/h.csv"],
        "aggregate": ["aggregate", *common, "--out", "{o}"],
        "simulate": ["simulate", "--config", str(cfg), "--seed", "10", "--out", "{o}/s.csv"],
    }
    differing = []
    for name, argv in runs.items():
        snapshots = []
        for rep in range(2):
            out = tmp_path / f"{name}{rep}"
            out.mkdir()
            code = main([a.replace("{o}", str(out)) for a in argv])
            capsys.readouterr()
            assert code == 0, name
            snapshots.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        if snapshots[0] != snapshots[1] or not snapshots[0]:
            differing.append(name)
    ok = not differing
    detail = f"{len(runs)} subcommands, differing={differing or 'none'}"
    assert verdict(10, ok, detail), detail
