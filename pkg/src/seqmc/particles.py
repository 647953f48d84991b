"""Interacting particle system: mutation + pairwise selection.

N particles follow the time-inhomogeneous dynamics lambda_t L_t; in addition,
for every ordered pair (i, j) particle i jumps onto particle j's position at
rate (H_t(x_i) - H_t(x_j))^+ / N.  Simulation is exact event-driven thinning:
candidate events arrive at a dominating Poisson rate

    R = safety * (lambda_bar * N * max_exit  +  N * osc_bar / 4)

(the pair-rate sum is at most N * osc(H)/4) and are accepted with the true
time-t rates, so all statistical tests downstream see only Monte Carlo error.

The system is exchangeable and every observable is a function of the
empirical measure, so the state is stored as per-state occupancy counts; a
``positions`` view expands them for diagnostics.  The weight accumulator

    logW(t) = -int_0^t <H_s, eta_s> ds

is advanced between events with the exact primitive
int_a^b H_s(x) ds = U_b(x) - U_a(x) + log Z_b - log Z_a.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._util import stream
from .errors import ModelError, SimulationError
from .dynamics import GeneratorSchedule, carre_du_champ
from .flow import _solve
from .model import EvolvingFamily, centered_rate, measure_at, oscillation

__all__ = [
    "ParticleState",
    "TrajectoryRecord",
    "init_particles",
    "simulate",
    "replicate_trajectories",
    "generator_action_check",
    "GeneratorActionCheck",
    "independent_baseline",
    "markov_law",
]

SIM_STREAM_TAG = 101


@dataclass
class ParticleState:
    """Mutable simulation state (occupancy counts plus the weight integral)."""

    t: float
    counts: np.ndarray
    n_particles: int
    log_weight: float
    rng: np.random.Generator
    mutation_events: int = 0
    selection_events: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.sum() != self.n_particles or np.any(counts < 0):
            raise ModelError("occupancy counts must be nonnegative and sum to N")
        self.counts = counts

    @property
    def positions(self) -> np.ndarray:
        """Sorted position vector equivalent to the counts."""
        return np.repeat(np.arange(self.counts.size), self.counts)

    @property
    def empirical(self) -> np.ndarray:
        return self.counts / self.n_particles


def init_particles(
    family: EvolvingFamily,
    n_particles: int,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    initial: np.ndarray | None = None,
) -> ParticleState:
    """N i.i.d. draws from the time-0 measure (or ``initial``) by inverse CDF."""
    if n_particles < 1:
        raise ModelError("need at least one particle")
    if rng is None:
        rng = stream(0 if seed is None else seed, SIM_STREAM_TAG)
    weights = measure_at(family, 0.0).weights if initial is None else np.asarray(initial, dtype=float)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(n_particles), side="right")
    counts = np.bincount(draws, minlength=family.n)
    return ParticleState(t=0.0, counts=counts, n_particles=n_particles, log_weight=0.0, rng=rng)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Snapshots of the empirical measure, weight and event counters."""

    times: np.ndarray
    etas: np.ndarray
    log_weights: np.ndarray
    mutation_counts: np.ndarray
    selection_counts: np.ndarray
    n_particles: int
    positions: np.ndarray | None = None

    def __post_init__(self):
        if np.max(np.abs(self.etas.sum(axis=1) - 1.0)) > 1e-12:
            raise ModelError("empirical snapshots must sum to 1")

    def _index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(float(self.times[k]) - t) > 1e-9:
            raise KeyError(f"time {t} is not a snapshot time")
        return k

    def eta(self, t: float) -> np.ndarray:
        return self.etas[self._index(t)]

    def log_weight(self, t: float) -> float:
        return float(self.log_weights[self._index(t)])

    def reweighted(self, t: float) -> np.ndarray:
        """nu_t^N = exp(logW_t) * eta_t^N."""
        k = self._index(t)
        return np.exp(self.log_weights[k]) * self.etas[k]

    def to_jsonl(self) -> str:
        lines = []
        for k, t in enumerate(self.times):
            lines.append(
                json.dumps(
                    {
                        "t": float(t),
                        "eta": self.etas[k].tolist(),
                        "logW": float(self.log_weights[k]),
                        "events": {
                            "mut": int(self.mutation_counts[k]),
                            "sel": int(self.selection_counts[k]),
                        },
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"


class _WeightClock:
    """Advances logW = -int <H_s, eta> ds with the exact primitive

        -int_a^b H_s(x) ds = -(U_b(x) - U_a(x) + log Z_b - log Z_a),

    caching the potential evaluation at the current time."""

    def __init__(self, family, t0: float):
        self.family = family
        self.log_base = np.log(family.base)
        self.t = t0
        self.u, self.log_z = self._eval(t0)

    def _eval(self, t):
        u = np.asarray(self.family.potential.values(t), dtype=float)
        logw = self.log_base - u
        m = float(np.max(logw))
        return u, m + float(np.log(np.exp(logw - m).sum()))

    def advance(self, counts, n_particles, b) -> float:
        if b == self.t:
            return 0.0
        u_b, log_z_b = self._eval(b)
        inc = -(float((u_b - self.u) @ counts) / n_particles + (log_z_b - self.log_z))
        self.t, self.u, self.log_z = b, u_b, log_z_b
        return inc


def _interval_bounds(family, gens, a, b, n_particles, selection, safety, grid=17):
    ts = np.linspace(a, b, grid)
    lam_bar = max(gens.intensity(float(u)) for u in ts)
    if gens.exit_bound is not None:
        exit_bar = gens.exit_bound
    else:
        exit_bar = max(float(np.max(-np.diag(gens.rates(float(u))))) for u in ts)
    mut = lam_bar * n_particles * exit_bar
    sel = 0.0
    if selection:
        osc_bar = max(oscillation(family, float(u)) for u in ts)
        sel = n_particles * osc_bar / 4.0
    total = safety * (mut + sel)
    if not np.isfinite(total):
        raise SimulationError(f"rate bound is not finite on [{a}, {b}]")
    return total


def _draw_from(rng, weights_flat, total):
    u = rng.random() * total
    cdf = np.cumsum(weights_flat)
    k = int(np.searchsorted(cdf, u, side="right"))
    k = min(k, len(weights_flat) - 1)
    # float plateau edge: never land on a zero-weight cell
    while weights_flat[k] <= 0.0 and k + 1 < len(weights_flat):
        k += 1
    while weights_flat[k] <= 0.0 and k > 0:
        k -= 1
    return k


def simulate(
    state: ParticleState,
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    t_end: float,
    snapshot_grid,
    selection: bool = True,
    record_positions: bool = False,
    safety: float = 1.2,
    rate_bound: float | None = None,
) -> TrajectoryRecord:
    """Run the particle system to t_end, recording at the snapshot times.

    Fully deterministic given the state's RNG stream.  ``selection=False``
    simulates independent particles (no resampling jumps).  ``rate_bound``
    lets replicate drivers reuse one dominating rate across runs.
    """
    grid = np.sort(np.unique(np.asarray(snapshot_grid, dtype=float)))
    if grid.size == 0 or grid[0] < state.t - 1e-12 or grid[-1] > t_end + 1e-12:
        raise ModelError("snapshot grid must lie within [state.t, t_end]")
    if t_end > family.horizon + 1e-12:
        raise ModelError("t_end beyond family horizon")

    n = family.n
    n_particles = state.n_particles
    rng = state.rng
    snaps_t, snaps_eta, snaps_lw, snaps_mut, snaps_sel, snaps_pos = [], [], [], [], [], []

    def record():
        snaps_t.append(state.t)
        snaps_eta.append(state.counts / n_particles)
        snaps_lw.append(state.log_weight)
        snaps_mut.append(state.mutation_events)
        snaps_sel.append(state.selection_events)
        if record_positions:
            snaps_pos.append(state.positions.copy())

    checkpoints = list(grid)
    if not checkpoints or checkpoints[-1] < t_end - 1e-12:
        checkpoints.append(t_end)
    next_snap = 0
    while next_snap < len(grid) and grid[next_snap] <= state.t + 1e-15:
        record()
        next_snap += 1

    clock = _WeightClock(family, state.t)
    # one dominating rate for the whole run; valid on every subinterval
    if rate_bound is None:
        rate_bound = _interval_bounds(family, gens, state.t, t_end, n_particles, selection, safety, grid=33)
    bound = rate_bound
    for cp in checkpoints:
        if cp <= state.t + 1e-15:
            continue
        while True:
            if bound <= 0.0:
                tau = cp
            else:
                tau = state.t + rng.exponential(1.0 / bound)
            if tau >= cp:
                state.log_weight += clock.advance(state.counts, n_particles, cp)
                state.t = cp
                break
            lam = gens.intensity(tau)
            rates = gens.rates(tau)
            exit_rates = -np.diag(rates)
            mut_rate = lam * float(state.counts @ exit_rates)
            sel_matrix = None
            sel_rate = 0.0
            if selection:
                h = centered_rate(family, tau)
                gap = np.maximum(h[:, None] - h[None, :], 0.0)
                sel_matrix = (state.counts[:, None] * state.counts[None, :]) * gap / n_particles
                sel_rate = float(sel_matrix.sum())
            total = mut_rate + sel_rate
            if total > bound * (1.0 + 1e-9):
                raise SimulationError(
                    f"event rate {total:.4g} exceeded its thinning bound {bound:.4g} "
                    f"at t={tau:.6g}; increase the safety factor"
                )
            if rng.random() * bound < total:
                state.log_weight += clock.advance(state.counts, n_particles, tau)
                state.t = tau
                if rng.random() * total < mut_rate:
                    w = state.counts * exit_rates
                    x = _draw_from(rng, w, float(w.sum()))
                    row = rates[x].copy()
                    row[x] = 0.0
                    y = _draw_from(rng, row, float(row.sum()))
                    state.counts[x] -= 1
                    state.counts[y] += 1
                    state.mutation_events += 1
                else:
                    k = _draw_from(rng, sel_matrix.reshape(-1), sel_rate)
                    x, y = divmod(k, n)
                    state.counts[x] -= 1
                    state.counts[y] += 1
                    state.selection_events += 1
            else:
                # rejected candidate: eta unchanged, but the weight integral
                # still advances over [state.t, tau]
                state.log_weight += clock.advance(state.counts, n_particles, tau)
                state.t = tau
        while next_snap < len(grid) and grid[next_snap] <= state.t + 1e-12:
            record()
            next_snap += 1

    return TrajectoryRecord(
        times=np.array(snaps_t),
        etas=np.array(snaps_eta),
        log_weights=np.array(snaps_lw),
        mutation_counts=np.array(snaps_mut, dtype=np.int64),
        selection_counts=np.array(snaps_sel, dtype=np.int64),
        n_particles=n_particles,
        positions=np.array(snaps_pos) if record_positions else None,
    )


def replicate_trajectories(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    n_particles: int,
    t_end: float,
    snapshot_grid,
    n_replicates: int,
    seed: int,
    selection: bool = True,
    safety: float = 1.2,
) -> list[TrajectoryRecord]:
    """Independent replicates on per-replicate RNG streams (seed, r)."""
    bound = _interval_bounds(family, gens, 0.0, t_end, n_particles, selection, safety, grid=33)
    out = []
    for r in range(n_replicates):
        st = init_particles(family, n_particles, rng=stream(seed, SIM_STREAM_TAG, r))
        out.append(
            simulate(st, family, gens, t_end, snapshot_grid, selection=selection, safety=safety,
                     rate_bound=bound)
        )
    return out


@dataclass(frozen=True)
class GeneratorActionCheck:
    drift_raw: float
    drift_closed: float
    gamma_raw: float
    gamma_closed: float

    @property
    def drift_gap(self) -> float:
        return abs(self.drift_raw - self.drift_closed)

    @property
    def gamma_gap(self) -> float:
        return abs(self.gamma_raw - self.gamma_closed)


def generator_action_check(
    positions: np.ndarray,
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    t: float,
    f: np.ndarray,
) -> GeneratorActionCheck:
    """Raw double-sum generator action on phi_f(x) = <f, eta(x)> versus the
    closed forms

        L^N phi_f   = lambda <Lf, eta> + <H, eta><f, eta> - <Hf, eta>
        Gamma^N(phi_f) = (lambda/N) <Gamma f, eta>
                         + (1/N) iint (H(y)-H(z))^+ (f(z)-f(y))^2 deta deta.
    """
    positions = np.asarray(positions, dtype=int)
    f = np.asarray(f, dtype=float)
    n_particles = positions.size
    lam = gens.intensity(t)
    rates = gens.rates(t)
    h = centered_rate(family, t)
    eta = np.bincount(positions, minlength=family.n) / n_particles

    # raw sums over particles and moves
    off = rates - np.diag(np.diag(rates))
    drift_raw = 0.0
    gamma_raw = 0.0
    for xi in positions:
        delta = (f - f[xi]) / n_particles
        drift_raw += lam * float(off[xi] @ delta)
        gamma_raw += lam * float(off[xi] @ (delta * delta))
    hp = h[positions]
    fp = f[positions]
    gap = np.maximum(hp[:, None] - hp[None, :], 0.0)
    fdiff = (fp[None, :] - fp[:, None]) / n_particles
    drift_raw += float((gap * fdiff).sum()) / n_particles
    gamma_raw += float((gap * fdiff * fdiff).sum()) / n_particles

    drift_closed = lam * float((rates @ f) @ eta) + float(h @ eta) * float(f @ eta) - float((h * f) @ eta)
    gamma_pairs = float(
        (np.maximum(h[:, None] - h[None, :], 0.0) * (f[None, :] - f[:, None]) ** 2 * (eta[:, None] * eta[None, :])).sum()
    )
    gamma_closed = lam / n_particles * float(carre_du_champ(rates, f) @ eta) + gamma_pairs / n_particles

    return GeneratorActionCheck(
        drift_raw=drift_raw,
        drift_closed=drift_closed,
        gamma_raw=gamma_raw,
        gamma_closed=gamma_closed,
    )


def markov_law(family: EvolvingFamily, gens: GeneratorSchedule, t_end: float, grid) -> np.ndarray:
    """Law mu_0 p_{0,t} of one particle moving without selection, on a grid."""
    grid = np.asarray(grid, dtype=float)
    y0 = measure_at(family, 0.0).weights

    def rhs(u, y):
        return gens.intensity(u) * (y @ gens.rates(u))

    sol = _solve(rhs, y0, (0.0, t_end), t_eval=grid)
    return sol.y.T.copy()


def independent_baseline(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    n_particles: int,
    t_end: float,
    seed: int,
    snapshot_grid,
) -> tuple[TrajectoryRecord, np.ndarray]:
    """Selection-free run plus its exact law mu_0 p_{0,t} per snapshot.

    The reweighted estimator of the interacting system is unbiased; this
    baseline generally is not, and the returned law makes the bias
    <f, mu_0 p_{0,t}> - <f, mu_t> computable exactly.
    """
    st = init_particles(family, n_particles, rng=stream(seed, SIM_STREAM_TAG, 0))
    record = simulate(st, family, gens, t_end, snapshot_grid, selection=False)
    law = markov_law(family, gens, t_end, record.times)
    return record, law
