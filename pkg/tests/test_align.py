import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainmc.align import (
    AlignmentMap, align_pair, align_pair_asymmetric, align_pair_indefinite, align_pair_psd,
    compose, lsq_align, procrustes,
)
from chainmc.blocks import EntityIndexSet, RescaledBlock
from chainmc.embed import Signature, embed
from chainmc.errors import DataError, NonUniqueAlignmentWarning, NumericalError

from helpers import asym_model, indefinite_model, psd_model


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def o2_grid_min(a, b, step=1e-4):
    """Brute-force min of ||aO - b||_F over rotations and reflections in O(2)."""
    theta = np.arange(0.0, 2 * np.pi, step)
    c, s = np.cos(theta), np.sin(theta)
    best = np.inf
    for flip in (1.0, -1.0):
        # O = [[c, -flip*s], [s, flip*c]]
        o = np.empty((theta.size, 2, 2))
        o[:, 0, 0], o[:, 0, 1] = c, -flip * s
        o[:, 1, 0], o[:, 1, 1] = s, flip * c
        r = np.einsum("md,kde->kme", a, o) - b
        best = min(best, float(np.sqrt(np.min(np.sum(r * r, axis=(1, 2))))))
    return best


def o3_grid(n=24):
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    out = []
    for al in ang:
        for be in np.linspace(0, np.pi, n // 2 + 1):
            for ga in ang:
                rz1 = np.array([[np.cos(al), -np.sin(al), 0], [np.sin(al), np.cos(al), 0], [0, 0, 1]])
                ry = np.array([[np.cos(be), 0, np.sin(be)], [0, 1, 0], [-np.sin(be), 0, np.cos(be)]])
                rz2 = np.array([[np.cos(ga), -np.sin(ga), 0], [np.sin(ga), np.cos(ga), 0], [0, 0, 1]])
                r = rz1 @ ry @ rz2
                out.append(r)
                out.append(r @ np.diag([1.0, 1.0, -1.0]))
    return np.array(out)


def window_block(p, rows, block_id, cols=None):
    rows = np.asarray(rows)
    if cols is None:
        sub = p[np.ix_(rows, rows)]
        sub = 0.5 * (sub + sub.T)
        return RescaledBlock(block_id, EntityIndexSet(rows), EntityIndexSet(rows), sub, 1.0)
    cols = np.asarray(cols)
    return RescaledBlock(block_id, EntityIndexSet(rows), EntityIndexSet(cols),
                         p[np.ix_(rows, cols)], 1.0, symmetric=False)


# procrustes

def test_procrustes_identity():
    a = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_allclose(procrustes(a, a), np.eye(3), atol=1e-12)


def test_procrustes_rotation_90():
    a = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    r = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert np.abs(procrustes(a, a @ r) - r).max() <= 1e-12


def test_procrustes_grid_oracle_5x2():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    w = procrustes(a, b)
    got = np.linalg.norm(a @ w - b)
    assert abs(got - o2_grid_min(a, b)) < 1e-6
    assert np.abs(w.T @ w - np.eye(2)).max() < 1e-10


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), m=st.integers(2, 8))
def test_procrustes_optimal_over_o2(seed, m):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, 2)), rng.standard_normal((m, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueAlignmentWarning)
        w = procrustes(a, b)
    assert np.linalg.norm(a @ w - b) <= o2_grid_min(a, b, step=1e-3) + 1e-6


def test_procrustes_optimal_over_o3_grid():
    rng = np.random.default_rng(2)
    grid = o3_grid()
    for _ in range(5):
        a, b = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
        w = procrustes(a, b)
        ours = np.linalg.norm(a @ w - b)
        r = np.einsum("md,kde->kme", a, grid) - b
        assert ours <= np.sqrt(np.sum(r * r, axis=(1, 2))).min() + 1e-6
        assert np.abs(w.T @ w - np.eye(3)).max() < 1e-10


def test_procrustes_degenerate_warns():
    a = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.warns(NonUniqueAlignmentWarning):
        w = procrustes(a, a)
    assert np.abs(w.T @ w - np.eye(2)).max() < 1e-10


def test_procrustes_shape_errors():
    with pytest.raises(DataError):
        procrustes(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(DataError):
        procrustes(np.ones((1, 2)), np.ones((1, 2)))


# least squares

def test_lsq_square_inverse():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    np.testing.assert_allclose(lsq_align(a, b), np.linalg.solve(a, b), atol=1e-10)


def test_lsq_identity():
    a = np.random.default_rng(4).standard_normal((6, 2))
    np.testing.assert_allclose(lsq_align(a, a), np.eye(2), atol=1e-12)


def test_lsq_beats_random_search():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    w = lsq_align(a, b)
    ours = np.linalg.norm(a @ w - b)
    cand = w + rng.standard_normal((100_000, 2, 2)) * rng.uniform(1e-3, 2.0, (100_000, 1, 1))
    r = np.einsum("md,kde->kme", a, cand) - b
    assert ours <= np.sqrt(np.sum(r * r, axis=(1, 2))).min()


def test_lsq_rank_deficient():
    a = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(NumericalError):
        lsq_align(a, a)


def test_lsq_shape_errors():
    with pytest.raises(DataError):
        lsq_align(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(DataError):
        lsq_align(np.ones((1, 2)), np.ones((1, 2)))


# pairwise alignment of embeddings

def test_psd_identical_blocks():
    rng = np.random.default_rng(6)
    p, _ = psd_model(rng, 20, [5.0, 3.0])
    e = embed(window_block(p, np.arange(20), "a"), "psd", 2)
    m = align_pair_psd(e, e)
    np.testing.assert_allclose(m.w, np.eye(2), atol=1e-10)
    assert m.kind == "orthogonal" and m.overlap_size == 20


@pytest.mark.parametrize("overlap", [3, 10])
def test_psd_noiseless_split(overlap):
    rng = np.random.default_rng(7)
    p, _ = psd_model(rng, 40, [9.0, 6.0, 4.0])
    ra = np.arange(0, 20)
    rb = np.arange(20 - overlap, 40)
    ea = embed(window_block(p, ra, "a"), "psd", 3)
    eb = embed(window_block(p, rb, "b"), "psd", 3)
    m = align_pair(ea, eb)
    shared = np.arange(20 - overlap, 20)
    xa = ea.x[np.searchsorted(ra, shared)]
    xb = eb.x[np.searchsorted(rb, shared)]
    assert np.abs(xa @ m.w - xb).max() < 1e-9
    assert np.abs(m.w.T @ m.w - np.eye(3)).max() < 1e-8


def test_psd_overlap_too_small():
    rng = np.random.default_rng(8)
    p, _ = psd_model(rng, 30, [9.0, 6.0, 4.0])
    ea = embed(window_block(p, np.arange(0, 16), "a"), "psd", 3)
    eb = embed(window_block(p, np.arange(14, 30), "b"), "psd", 3)
    with pytest.raises(DataError, match="share 2"):
        align_pair_psd(ea, eb)


def test_psd_frame_invariance():
    rng = np.random.default_rng(9)
    p, _ = psd_model(rng, 30, [9.0, 6.0, 4.0])
    p = p + 0.05 * (lambda z: z + z.T)(rng.standard_normal((30, 30)))
    ra, rb = np.arange(0, 18), np.arange(10, 30)
    ea = embed(window_block(p, ra, "a"), "psd", 3)
    eb = embed(window_block(p, rb, "b"), "psd", 3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    from dataclasses import replace
    ea_q = replace(ea, x=ea.x @ q)
    w = align_pair_psd(ea, eb).w
    w_q = align_pair_psd(ea_q, eb).w
    np.testing.assert_allclose(w_q, q.T @ w, atol=1e-9)
    np.testing.assert_allclose(ea_q.x @ w_q @ eb.x.T, ea.x @ w @ eb.x.T, atol=1e-9)


def test_indefinite_identical_and_exact():
    rng = np.random.default_rng(10)
    p = indefinite_model(rng, 30, [6.0, -4.0])
    ea = embed(window_block(p, np.arange(0, 20), "a"), "indef", Signature(1, 1))
    np.testing.assert_allclose(align_pair_indefinite(ea, ea).w, np.eye(2), atol=1e-10)
    eb = embed(window_block(p, np.arange(12, 30), "b"), "indef", Signature(1, 1))
    m = align_pair(ea, eb)
    assert m.kind == "general_linear"
    est = (ea.x @ m.w * eb.core) @ eb.x.T
    assert np.abs(est - p[np.ix_(np.arange(0, 20), np.arange(12, 30))]).max() < 1e-8


def test_indefinite_perturbation_shrinks_with_overlap():
    rng = np.random.default_rng(11)
    core = np.array([1.0, -1.0])
    t = 0.7
    w0 = np.array([[np.cosh(t), np.sinh(t)], [np.sinh(t), np.cosh(t)]])
    assert np.abs(w0 @ np.diag(core) @ w0.T - np.diag(core)).max() < 1e-12
    medians = []
    for m in (5, 10, 20, 50):
        errs = []
        for _ in range(50):
            a = rng.standard_normal((m, 2))
            b = a @ w0
            w = lsq_align(a + 0.01 * rng.standard_normal(a.shape),
                          b + 0.01 * rng.standard_normal(b.shape))
            errs.append(np.linalg.norm(w - w0))
        medians.append(np.median(errs))
    assert all(x > y for x, y in zip(medians, medians[1:]))


def test_asym_both_overlaps_agree():
    rng = np.random.default_rng(12)
    p = asym_model(rng, 30, [5.0, 3.0])
    ea = embed(window_block(p, np.arange(0, 18), "a", np.arange(0, 18)), "asym", 2)
    eb = embed(window_block(p, np.arange(10, 30), "b", np.arange(10, 30)), "asym", 2)
    from chainmc.blocks import compute_overlap
    ov = compute_overlap(ea, eb)
    wx = lsq_align(ea.x[ov.local_rows_a], eb.x[ov.local_rows_b])
    wy = lsq_align(eb.y[ov.local_cols_b], ea.y[ov.local_cols_a]).T
    np.testing.assert_allclose(wx, wy, atol=1e-9)
    m = align_pair_asymmetric(ea, eb)
    np.testing.assert_allclose(m.w, wx, atol=1e-9)
    est = ea.x @ m.w @ eb.y.T
    assert np.abs(est - p[np.ix_(np.arange(0, 18), np.arange(10, 30))]).max() < 1e-8


def test_asym_row_overlap_only():
    rng = np.random.default_rng(13)
    p = asym_model(rng, 40, [5.0, 3.0])
    ea = embed(window_block(p, np.arange(0, 20), "a", np.arange(0, 15)), "asym", 2)
    eb = embed(window_block(p, np.arange(12, 32), "b", np.arange(20, 40)), "asym", 2)
    m = align_pair_asymmetric(ea, eb)
    assert m.overlap_size == 8
    est = ea.x @ m.w @ eb.y.T
    assert np.abs(est - p[np.ix_(np.arange(0, 20), np.arange(20, 40))]).max() < 1e-8


def test_asym_column_overlap_only():
    rng = np.random.default_rng(14)
    p = asym_model(rng, 40, [5.0, 3.0])
    ea = embed(window_block(p, np.arange(0, 15), "a", np.arange(0, 20)), "asym", 2)
    eb = embed(window_block(p, np.arange(20, 40), "b", np.arange(12, 32)), "asym", 2)
    m = align_pair_asymmetric(ea, eb)
    est = ea.x @ m.w @ eb.y.T
    assert np.abs(est - p[np.ix_(np.arange(0, 15), np.arange(12, 32))]).max() < 1e-8


def test_asym_no_overlap():
    rng = np.random.default_rng(15)
    p = asym_model(rng, 40, [5.0, 3.0])
    ea = embed(window_block(p, np.arange(0, 15), "a", np.arange(0, 15)), "asym", 2)
    eb = embed(window_block(p, np.arange(14, 30), "b", np.arange(14, 30)), "asym", 2)
    with pytest.raises(DataError):
        align_pair_asymmetric(ea, eb)


# compose

def amap(a, b, w, kind="orthogonal"):
    return AlignmentMap(a, b, w, kind, 5)


def test_compose_single():
    r = rot2(0.3)
    np.testing.assert_array_equal(compose([amap("a", "b", r)]), r)


def test_compose_inverse_rotations():
    w = compose([amap("a", "b", rot2(1.1)), amap("b", "c", rot2(-1.1))])
    assert np.abs(w - np.eye(2)).max() <= 1e-12


def test_compose_orthogonal_product():
    rng = np.random.default_rng(16)
    qs = [np.linalg.qr(rng.standard_normal((3, 3)))[0] for _ in range(3)]
    w = compose([amap("a", "b", qs[0]), amap("b", "c", qs[1]), amap("c", "d", qs[2])])
    assert np.abs(w.T @ w - np.eye(3)).max() < 1e-10


def test_compose_associative():
    rng = np.random.default_rng(17)
    ws = [rng.standard_normal((3, 3)) for _ in range(3)]
    maps = [amap("a", "b", ws[0], "general_linear"), amap("b", "c", ws[1], "general_linear"),
            amap("c", "d", ws[2], "general_linear")]
    left = amap("a", "c", compose(maps[:2]), "general_linear")
    np.testing.assert_allclose(compose([left, maps[2]]), compose(maps), atol=1e-12)


def test_compose_errors():
    with pytest.raises(DataError, match="broken chain"):
        compose([amap("a", "b", np.eye(2)), amap("c", "d", np.eye(2))])
    with pytest.raises(DataError):
        compose([amap("a", "b", np.eye(2)), amap("b", "c", np.eye(3))])
    with pytest.raises(DataError):
        compose([])


def test_alignment_map_kind():
    with pytest.raises(ValueError):
        AlignmentMap("a", "b", np.eye(2), "affine", 3)
