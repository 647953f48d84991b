"""Evolving measure families on finite state spaces.

A family is mu_t = exp(-U_t) * base / Z_t for a time-differentiable potential
schedule U_t.  The centered potential rate

    H_t = dU_t/dt - <dU_t/dt, mu_t>

is the negative logarithmic time derivative of mu_t, satisfies <H_t, mu_t> = 0,
and drives everything downstream: flows, propagators, selection rates and the
change functionals K_t(q) = int_0^t ||H_s||_{L^q(mu_s)} ds.

All probability computations run in log domain with a max shift so that
strongly tilted families (Gaussian tails with large Delta/sigma) stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from ._util import blockwise_lq_norm, lq_norm
from .errors import ConfigError, ModelError

__all__ = [
    "StateSpace",
    "PotentialSchedule",
    "LinearTilt",
    "MovingGaussianPotential",
    "TabulatedPotential",
    "ProductPotential",
    "CallablePotential",
    "ScalarSchedule",
    "EvolvingFamily",
    "MeasureSnapshot",
    "BlockConditional",
    "measure_at",
    "centered_rate",
    "oscillation",
    "oscillation_table",
    "rate_norm",
    "accumulated_change",
    "block_conditionals",
    "block_mass_ratio_sup",
]


@dataclass(frozen=True)
class StateSpace:
    """Finite ordered state space.

    ``embedding`` gives an integer coordinate per state for one-dimensional
    chains; ``partition`` lists disjoint index blocks covering all states
    (components not connected by the dynamics).
    """

    labels: tuple
    embedding: tuple | None = None
    partition: tuple | None = None

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise ModelError("state space must contain at least one state")
        if len(set(self.labels)) != n:
            raise ModelError("state labels must be unique")
        if self.embedding is not None:
            if len(self.embedding) != n:
                raise ModelError("embedding must assign one coordinate per state")
            if len(set(self.embedding)) != n:
                raise ModelError("embedding coordinates must be distinct integers")
        if self.partition is not None:
            seen = []
            for block in self.partition:
                if len(block) == 0:
                    raise ModelError("partition blocks must be nonempty")
                seen.extend(block)
            if sorted(seen) != list(range(n)):
                raise ModelError("partition blocks must be disjoint and cover all states")

    @property
    def n(self) -> int:
        return len(self.labels)

    def coordinates(self) -> np.ndarray:
        if self.embedding is None:
            raise ConfigError("state space has no integer embedding")
        return np.asarray(self.embedding, dtype=float)


def integer_line_space(a: int, width: int, partition=None) -> StateSpace:
    """States a, a+1, ..., a+width-1 with the identity embedding."""
    coords = tuple(range(a, a + width))
    return StateSpace(labels=coords, embedding=coords, partition=partition)


class PotentialSchedule:
    """Time-differentiable potential schedule U_t over the states.

    Subclasses implement ``values``/``rates``; the paired/batched evaluators
    have generic (slow) fallbacks used only by vectorized samplers.
    """

    def values(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def rates(self, t: float) -> np.ndarray:
        """dU_t/dt per state."""
        raise NotImplementedError

    def values_matrix(self, ts: np.ndarray) -> np.ndarray:
        return np.stack([self.values(float(t)) for t in np.asarray(ts, dtype=float)])

    def values_at(self, ts: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Paired evaluation U_{ts[k]}(idx[k])."""
        ts = np.asarray(ts, dtype=float)
        idx = np.asarray(idx, dtype=int)
        return np.array([self.values(float(t))[i] for t, i in zip(ts, idx)])

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class LinearTilt(PotentialSchedule):
    """U_t = t * direction (the exponential family through the base measure)."""

    direction: np.ndarray

    def values(self, t):
        return t * np.asarray(self.direction, dtype=float)

    def rates(self, t):
        return np.asarray(self.direction, dtype=float)

    def values_matrix(self, ts):
        return np.asarray(ts, dtype=float)[:, None] * np.asarray(self.direction, dtype=float)[None, :]

    def values_at(self, ts, idx):
        return np.asarray(ts, dtype=float) * np.asarray(self.direction, dtype=float)[np.asarray(idx, dtype=int)]


@dataclass(frozen=True)
class ScalarSchedule:
    """Scalar parameter schedule c(t) = offset + slope * t."""

    offset: float
    slope: float = 0.0

    def value(self, t):
        return self.offset + self.slope * t

    def rate(self, t):
        return self.slope if np.isscalar(t) else np.full_like(np.asarray(t, dtype=float), self.slope)


@dataclass(frozen=True)
class MovingGaussianPotential(PotentialSchedule):
    """U_t(x) = (x - m_t)^2 / (2 sigma_t^2) on embedded integer states."""

    coords: np.ndarray
    mean: ScalarSchedule
    width: ScalarSchedule

    def values(self, t):
        m, s = self.mean.value(t), self.width.value(t)
        d = np.asarray(self.coords, dtype=float) - m
        return d * d / (2.0 * s * s)

    def rates(self, t):
        m, s = self.mean.value(t), self.width.value(t)
        dm, ds = self.mean.rate(t), self.width.rate(t)
        d = np.asarray(self.coords, dtype=float) - m
        return -dm * d / (s * s) - ds * d * d / (s * s * s)

    def values_matrix(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        m = np.asarray(self.mean.value(ts), dtype=float)[:, None]
        s = np.asarray(self.width.value(ts), dtype=float)[:, None]
        d = np.asarray(self.coords, dtype=float)[None, :] - m
        return d * d / (2.0 * s * s)

    def values_at(self, ts, idx):
        ts = np.asarray(ts, dtype=float)
        m = np.asarray(self.mean.value(ts))
        s = np.asarray(self.width.value(ts))
        d = np.asarray(self.coords, dtype=float)[np.asarray(idx, dtype=int)] - m
        return d * d / (2.0 * s * s)


@dataclass(frozen=True)
class TabulatedPotential(PotentialSchedule):
    """Potential given on a time grid, linearly interpolated.

    The time derivative is piecewise constant (segment slopes); snapshots and
    reports carry this interpolation caveat instead of smoothing it away.
    """

    times: np.ndarray
    table: np.ndarray  # shape (len(times), n)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ModelError("tabulated potential needs at least two strictly increasing times")
        if np.asarray(self.table).shape[0] != t.size:
            raise ModelError("potential table must have one row per time node")

    def _segment(self, t):
        times = np.asarray(self.times, dtype=float)
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        return k, times

    def values(self, t):
        k, times = self._segment(t)
        w = (t - times[k]) / (times[k + 1] - times[k])
        tab = np.asarray(self.table, dtype=float)
        return (1.0 - w) * tab[k] + w * tab[k + 1]

    def rates(self, t):
        k, times = self._segment(t)
        tab = np.asarray(self.table, dtype=float)
        return (tab[k + 1] - tab[k]) / (times[k + 1] - times[k])

    def describe(self):
        return f"TabulatedPotential(nodes={len(np.asarray(self.times))}, linear interpolation, piecewise-constant rate)"


@dataclass(frozen=True)
class ProductPotential(PotentialSchedule):
    """Sum of component potentials over a product space.

    ``index_maps[c][j]`` is the component-c state index of product state j.
    """

    components: tuple
    index_maps: tuple

    def values(self, t):
        out = 0.0
        for pot, imap in zip(self.components, self.index_maps):
            out = out + pot.values(t)[np.asarray(imap, dtype=int)]
        return out

    def rates(self, t):
        out = 0.0
        for pot, imap in zip(self.components, self.index_maps):
            out = out + pot.rates(t)[np.asarray(imap, dtype=int)]
        return out


@dataclass(frozen=True)
class CallablePotential(PotentialSchedule):
    """Wrap plain callables t -> U_t and t -> dU_t/dt (vectors over states)."""

    value_fn: Callable[[float], np.ndarray]
    rate_fn: Callable[[float], np.ndarray]
    label: str = "callable"

    def values(self, t):
        return np.asarray(self.value_fn(t), dtype=float)

    def rates(self, t):
        return np.asarray(self.rate_fn(t), dtype=float)

    def describe(self):
        return self.label


@dataclass(frozen=True)
class EvolvingFamily:
    """mu_t = exp(-U_t) * base / Z_t on ``space`` for t in [0, horizon]."""

    space: StateSpace
    base: np.ndarray
    potential: PotentialSchedule
    horizon: float
    check_rate_consistency: bool = True

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        if base.shape != (self.space.n,):
            raise ModelError("base measure must have one weight per state")
        if np.any(base <= 0.0):
            raise ModelError("base measure must be strictly positive")
        if abs(base.sum() - 1.0) > 1e-12:
            raise ModelError("base measure must sum to 1 within 1e-12")
        if not (self.horizon > 0.0):
            raise ModelError("horizon must be positive")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "_log_base", np.log(base))
        if self.check_rate_consistency:
            self._check_rates()

    def _check_rates(self, step: float = 1e-5, rtol: float = 1e-4):
        """Central finite difference of U must match the declared rate.

        Tabulated potentials are checked away from their knots (the rate is
        piecewise constant there by construction).
        """
        ts = np.linspace(0.0, self.horizon, 7)[1:-1]
        if isinstance(self.potential, TabulatedPotential):
            knots = np.asarray(self.potential.times, dtype=float)
            ts = np.array([t for t in ts if np.min(np.abs(knots - t)) > 2 * step])
        for t in ts:
            lo = max(t - step, 0.0)
            hi = min(t + step, self.horizon)
            fd = (self.potential.values(hi) - self.potential.values(lo)) / (hi - lo)
            declared = self.potential.rates(float(t))
            scale = np.maximum(np.abs(declared), 1.0)
            if np.any(np.abs(fd - declared) > rtol * scale):
                raise ModelError(
                    f"potential rate inconsistent with potential at t={t:.4g} "
                    f"(max rel dev {np.max(np.abs(fd - declared) / scale):.3g})"
                )

    @property
    def n(self) -> int:
        return self.space.n

    def log_weights(self, t: float) -> tuple[np.ndarray, float]:
        """(log mu_t, log Z_t); raises on non-finite potential values."""
        u = np.asarray(self.potential.values(t), dtype=float)
        if u.shape != (self.n,):
            raise ModelError("potential must return one value per state")
        if not np.all(np.isfinite(u)):
            raise ModelError(f"non-finite potential value at t={t}")
        logw = -u + self._log_base
        m = float(np.max(logw))
        log_z = m + float(np.log(np.exp(logw - m).sum()))
        return logw - log_z, log_z


@dataclass(frozen=True)
class MeasureSnapshot:
    """mu_t as a probability vector together with log Z_t."""

    t: float
    weights: np.ndarray
    log_z: float
    note: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ModelError("snapshot weights must be a probability vector")


def measure_at(family: EvolvingFamily, t: float) -> MeasureSnapshot:
    """mu_t = exp(-U_t) * base / Z_t, evaluated with a max shift."""
    if not (0.0 <= t <= family.horizon + 1e-12):
        raise ModelError(f"time {t} outside [0, {family.horizon}]")
    logw, log_z = family.log_weights(t)
    w = np.exp(logw)
    w = w / w.sum()  # second normalization removes O(eps) rounding
    return MeasureSnapshot(t=t, weights=w, log_z=log_z, note=family.potential.describe())


def centered_rate(family: EvolvingFamily, t: float) -> np.ndarray:
    """H_t = dU_t/dt - <dU_t/dt, mu_t>; satisfies <H_t, mu_t> = 0."""
    logw, _ = family.log_weights(t)
    mu = np.exp(logw)
    mu /= mu.sum()
    du = np.asarray(family.potential.rates(t), dtype=float)
    if not np.all(np.isfinite(du)):
        raise ModelError(f"non-finite potential rate at t={t}")
    return du - float(du @ mu)


def oscillation(family: EvolvingFamily, t: float) -> float:
    h = centered_rate(family, t)
    return float(h.max() - h.min())


@dataclass(frozen=True)
class OscillationTable:
    times: np.ndarray
    osc: np.ndarray
    sup: float
    grid_points: int

    def as_dict(self):
        return {
            "grid_points": self.grid_points,
            "sup": self.sup,
            "times": self.times.tolist(),
            "osc": self.osc.tolist(),
        }


def oscillation_table(family: EvolvingFamily, t_end: float, grid_points: int = 512) -> OscillationTable:
    """osc(H_t) on a uniform grid and its grid maximum (a lower surrogate
    for the true supremum; the grid size is carried in the result)."""
    if grid_points < 2:
        raise ModelError("grid_points must be at least 2")
    ts = np.linspace(0.0, t_end, grid_points)
    osc = np.array([oscillation(family, float(t)) for t in ts])
    return OscillationTable(times=ts, osc=osc, sup=float(osc.max()), grid_points=grid_points)


def rate_norm(family: EvolvingFamily, t: float, q, blockwise: bool = False) -> float:
    """||H_t||_{L^q(mu_t)}, optionally in the blockwise-max norm."""
    h = centered_rate(family, t)
    mu = measure_at(family, t).weights
    if blockwise:
        if family.space.partition is None:
            raise ConfigError("blockwise norm requested without a partition")
        return blockwise_lq_norm(h, mu, family.space.partition, q)
    return lq_norm(h, mu, q)


def accumulated_change(
    family: EvolvingFamily, t: float, q, blockwise: bool = False, rel_tol: float = 1e-6
) -> float:
    """K_t(q) = int_0^t ||H_s||_{L^q(mu_s)} ds by adaptive quadrature."""
    if not (np.isinf(q) or q >= 1):
        raise ModelError("norm order must satisfy q >= 1 or q = inf")
    if t == 0.0:
        return 0.0
    val, _ = integrate.quad(
        lambda s: rate_norm(family, s, q, blockwise=blockwise),
        0.0,
        t,
        epsrel=rel_tol,
        epsabs=1e-12,
        limit=200,
    )
    return float(val)


@dataclass(frozen=True)
class BlockConditional:
    """Per-block conditional measure and centered rate at one time."""

    block: np.ndarray          # state indices of the block
    weights: np.ndarray        # mu_t conditioned on the block
    rate: np.ndarray           # H_t - h_t(i) restricted to the block
    block_rate: float          # h_t(i) = <H_t, mu_t^i> = -d/dt log mu_t(S_i)
    mass: float                # mu_t(S_i)


def block_conditionals(family: EvolvingFamily, t: float) -> list[BlockConditional]:
    if family.space.partition is None:
        raise ConfigError("family has no partition")
    mu = measure_at(family, t).weights
    h = centered_rate(family, t)
    out = []
    for block in family.space.partition:
        idx = np.asarray(block, dtype=int)
        mass = float(mu[idx].sum())
        cond = mu[idx] / mass
        block_rate = float(h[idx] @ cond)
        out.append(
            BlockConditional(
                block=idx, weights=cond, rate=h[idx] - block_rate, block_rate=block_rate, mass=mass
            )
        )
    return out


def block_mass_ratio_sup(family: EvolvingFamily, t: float, grid_points: int = 512) -> float:
    """max_i sup_{0<=r<=s<=t} mu_s(S_i)/mu_r(S_i), approximated on a grid."""
    if family.space.partition is None:
        raise ConfigError("family has no partition")
    ts = np.linspace(0.0, t, grid_points)
    masses = np.empty((grid_points, len(family.space.partition)))
    for k, s in enumerate(ts):
        mu = measure_at(family, float(s)).weights
        for i, block in enumerate(family.space.partition):
            masses[k, i] = mu[np.asarray(block, dtype=int)].sum()
    best = 1.0
    for i in range(masses.shape[1]):
        running_min = np.minimum.accumulate(masses[:, i])
        best = max(best, float(np.max(masses[:, i] / running_min)))
    return best


# ----------------------------------------------------------------------------
# Builtin families
# ----------------------------------------------------------------------------

def tilt_family(direction, base=None, horizon: float = 1.0, space: StateSpace | None = None) -> EvolvingFamily:
    """Exponential family U_t = t * direction."""
    direction = np.asarray(direction, dtype=float)
    n = direction.size
    if space is None:
        space = StateSpace(labels=tuple(range(n)), embedding=tuple(range(n)))
    if base is None:
        base = np.full(n, 1.0 / n)
    return EvolvingFamily(space=space, base=np.asarray(base, dtype=float), potential=LinearTilt(direction), horizon=horizon)


def flat_family(n: int, base=None, horizon: float = 1.0) -> EvolvingFamily:
    """H == 0 family: the measure never moves."""
    return tilt_family(np.zeros(n), base=base, horizon=horizon)


def moving_gaussian_family(
    a: int,
    width: int,
    mean: ScalarSchedule,
    sigma: ScalarSchedule,
    horizon: float = 1.0,
) -> EvolvingFamily:
    """Example family: mu_t proportional to exp(-(x-m_t)^2 / (2 sigma_t^2))
    on the integer interval a..a+width-1, uniform base measure."""
    space = integer_line_space(a, width)
    pot = MovingGaussianPotential(coords=np.asarray(space.embedding, dtype=float), mean=mean, width=sigma)
    return EvolvingFamily(space=space, base=np.full(width, 1.0 / width), potential=pot, horizon=horizon)


def two_block_family(block_sizes: Sequence[int], shift_rate: float, horizon: float = 1.0) -> EvolvingFamily:
    """Two disconnected blocks; mass drains out of the second at rate
    governed by U_t = shift_rate * t on the second block."""
    n1, n2 = block_sizes
    n = n1 + n2
    partition = (tuple(range(n1)), tuple(range(n1, n)))
    space = StateSpace(labels=tuple(range(n)), embedding=tuple(range(n)), partition=partition)
    direction = np.concatenate([np.zeros(n1), np.full(n2, float(shift_rate))])
    return EvolvingFamily(space=space, base=np.full(n, 1.0 / n), potential=LinearTilt(direction), horizon=horizon)
