"""Small numeric helpers: stable sums, weighted norms, RNG streams."""

from __future__ import annotations

import numpy as np


def kahan_sum(values) -> float:
    """Compensated sum of ``values`` in the order given."""
    total = 0.0
    carry = 0.0
    for v in values:
        y = float(v) - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total


def logsum(log_terms) -> float:
    """log(sum(exp(log_terms))) with a max shift, compensated, order kept.

    Returns -inf for an empty sequence.
    """
    arr = np.asarray(log_terms, dtype=float)
    if arr.size == 0:
        return -np.inf
    m = float(np.max(arr))
    if not np.isfinite(m):
        return m
    return m + float(np.log(kahan_sum(np.exp(arr - m))))


def lq_norm(f, mu, q) -> float:
    """L^q(mu) norm of f on a finite space; q = inf is the max norm."""
    f = np.asarray(f, dtype=float)
    if np.isinf(q):
        return float(np.max(np.abs(f)))
    mu = np.asarray(mu, dtype=float)
    if q == 1.0:
        return float(np.abs(f) @ mu)
    if q == 2.0:
        return float(np.sqrt((f * f) @ mu))
    return float(((np.abs(f) ** q) @ mu) ** (1.0 / q))


def blockwise_lq_norm(f, mu, blocks, q) -> float:
    """max over blocks of the L^q norm w.r.t. the block-conditioned measure."""
    f = np.asarray(f, dtype=float)
    mu = np.asarray(mu, dtype=float)
    best = 0.0
    for idx in blocks:
        idx = np.asarray(idx, dtype=int)
        mass = float(mu[idx].sum())
        best = max(best, lq_norm(f[idx], mu[idx] / mass, q))
    return best


def stream(*keys: int) -> np.random.Generator:
    """Deterministic counter-based RNG stream for a tuple of integer keys.

    Streams with distinct key tuples are statistically independent, so
    replicate / path workers can be seeded as ``stream(seed, tag, index)``
    without any coordination.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def trapezoid_weights(ts: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature weights for (sorted) nodes ``ts``."""
    ts = np.asarray(ts, dtype=float)
    if ts.size == 1:
        return np.zeros(1)
    w = np.empty_like(ts)
    dt = np.diff(ts)
    w[0] = dt[0] / 2.0
    w[-1] = dt[-1] / 2.0
    w[1:-1] = (dt[:-1] + dt[1:]) / 2.0
    return w


def bootstrap_se(values, n_boot: int, rng: np.random.Generator, statistic=np.mean) -> float:
    """Bootstrap standard error of ``statistic`` over 1-d ``values``."""
    values = np.asarray(values, dtype=float)
    n = values.size
    idx = rng.integers(0, n, size=(n_boot, n))
    stats = np.apply_along_axis(statistic, 1, values[idx])
    return float(np.std(stats, ddof=1))
