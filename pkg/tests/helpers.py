"""Shared builders for exact low-rank models used across the tests."""

import numpy as np

from chainmc.blocks import ObservedBlock


def orthonormal(rng, n, d):
    q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    return q


def psd_model(rng, n_total, spectrum):
    u = orthonormal(rng, n_total, len(spectrum))
    x = u * np.sqrt(spectrum)
    return x @ x.T, x


def indefinite_model(rng, n_total, spectrum):
    spectrum = np.asarray(spectrum, dtype=float)
    u = orthonormal(rng, n_total, spectrum.size)
    p = (u * spectrum) @ u.T
    return 0.5 * (p + p.T)


def asym_model(rng, n_total, singular):
    u = orthonormal(rng, n_total, len(singular))
    v = orthonormal(rng, n_total, len(singular))
    return (u * singular) @ v.T


def diagonal_windows(n, m, count):
    step = n - m
    return [np.arange(i * step, i * step + n) for i in range(count)]


def full_block(block_id, p, rows, cols=None, q=1.0):
    if cols is None:
        sub = p[np.ix_(rows, rows)]
        sub = 0.5 * (sub + sub.T)
        return ObservedBlock(str(block_id), rows, sub, np.ones(sub.shape, bool), q=q)
    sub = p[np.ix_(rows, cols)]
    return ObservedBlock(str(block_id), rows, sub, np.ones(sub.shape, bool), cols=cols,
                         q=q, symmetric=False)


def noisy_block(rng, block_id, p, rows, sigma, q):
    n = rows.size
    z = rng.standard_normal((n, n))
    z = np.triu(z) + np.triu(z, 1).T
    mask = rng.random((n, n)) < q
    mask = np.triu(mask) | np.triu(mask, 1).T
    sub = p[np.ix_(rows, rows)]
    sub = 0.5 * (sub + sub.T)
    return ObservedBlock(str(block_id), rows, sub + sigma * z, mask, q=q)
