"""Deterministic oracles: measure flows and Feynman-Kac propagators.

The unnormalized flow

    d nu_t / dt = lambda_t L_t^* nu_t - H_t nu_t                       (*)

is solved by mu_t when started from mu_0; the normalized variant adds
+ <H_t, eta_t> eta_t and keeps probability vectors.  The propagator q_{s,t}
solves the forward matrix equation dQ/dt = Q (lambda_t L_t - diag H_t) with
Q(s,s) = I, acts on functions from the left, and satisfies mu_s Q = mu_t.

Operator norms C_{s,t}(p) = sup ||q_{s,t} f||_{L^p(mu_s)} / ||f||_{L^p(mu_t)}
(mixed-measure convention; note p = 1 gives exactly 1) are estimated from
below by projected power ascent and bracketed from above by the elementary
growth certificate exp(int_s^t osc(H_r) dr).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._util import stream
from .errors import ModelError, SimulationError, StiffnessError
from .model import (
    EvolvingFamily,
    centered_rate,
    measure_at,
    oscillation,
    oscillation_table,
    rate_norm,
)
from .dynamics import GeneratorSchedule

__all__ = [
    "FlowSolution",
    "Propagator",
    "solve_flow",
    "propagator",
    "markov_transition",
    "invariance_gap",
    "backward_consistency",
    "fk_estimate",
    "NormEstimate",
    "operator_norm",
    "operator_norm_pair",
    "operator_norms",
    "growth_bound",
    "window_norm_integral",
    "WindowIntegral",
]

ODE_RTOL = 1e-10
ODE_ATOL = 1e-13
POSITIVITY_TOL = 1e-12


def _solve(rhs, y0, t_span, rtol=ODE_RTOL, atol=ODE_ATOL, t_eval=None, dense=False):
    sol = integrate.solve_ivp(
        rhs, t_span, y0, method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval, dense_output=dense
    )
    if not sol.success:
        raise StiffnessError(
            f"ODE solve failed on [{t_span[0]}, {t_span[1]}]: {sol.message}",
            diagnostics={"nfev": sol.nfev, "status": sol.status, "message": sol.message},
        )
    return sol


@dataclass(frozen=True)
class FlowSolution:
    """Measure flow evaluated on a time grid."""

    times: np.ndarray
    measures: np.ndarray      # shape (len(times), n)
    normalized: bool
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.measures, dtype=float)
        if self.normalized:
            if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-10:
                raise ModelError("normalized flow does not sum to 1 within 1e-10")
        else:
            if np.any(m <= -1e-12):
                raise ModelError("unnormalized flow lost positivity")

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(float(self.times[k]) - t) > 1e-9:
            raise KeyError(f"time {t} not on the flow grid")
        return self.measures[k]


def solve_flow(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    t_end: float,
    normalized: bool = True,
    grid: np.ndarray | None = None,
    initial: np.ndarray | None = None,
    rtol: float = ODE_RTOL,
) -> FlowSolution:
    """Solve (*) or its normalized variant from t = 0 to t_end."""
    if grid is None:
        grid = np.linspace(0.0, t_end, 33)
    grid = np.asarray(grid, dtype=float)
    y0 = measure_at(family, 0.0).weights if initial is None else np.asarray(initial, dtype=float)

    def rhs(t, y):
        lam = gens.intensity(t)
        rates = gens.rates(t)
        h = centered_rate(family, t)
        dy = lam * (y @ rates) - h * y
        if normalized:
            dy = dy + float(h @ y) * y
        return dy

    sol = _solve(rhs, y0, (0.0, t_end), rtol=rtol, t_eval=grid)
    return FlowSolution(
        times=grid,
        measures=sol.y.T.copy(),
        normalized=normalized,
        diagnostics={"nfev": int(sol.nfev), "rtol": rtol, "atol": ODE_ATOL},
    )


@dataclass(frozen=True)
class Propagator:
    """Dense q_{s,t}: (q_{s,t} f)(x) = sum_y Q[x, y] f(y)."""

    s: float
    t: float
    matrix: np.ndarray
    with_potential: bool = True
    rtol: float = ODE_RTOL
    atol: float = ODE_ATOL
    nfev: int = 0
    steps: int = 0

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=float)
        if np.any(q < -POSITIVITY_TOL):
            raise ModelError(
                f"propagator lost positivity (min entry {q.min():.3e}); tighten tolerances"
            )

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(f, dtype=float)


def propagator(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    s: float,
    t: float,
    with_potential: bool = True,
    rtol: float = ODE_RTOL,
) -> Propagator:
    """Forward matrix solve of the propagator between times s <= t.

    ``with_potential=False`` drops the potential term and returns the plain
    Markov transition matrix p_{s,t} (rows sum to 1).
    """
    if not (0.0 <= s <= t <= family.horizon + 1e-12):
        raise ModelError(f"need 0 <= s <= t <= horizon, got s={s}, t={t}")
    n = family.n
    if t == s:
        return Propagator(s=s, t=t, matrix=np.eye(n), with_potential=with_potential, rtol=rtol)

    def rhs(u, y):
        q = y.reshape(n, n)
        b = gens.intensity(u) * gens.rates(u)
        if with_potential:
            b = b - np.diag(centered_rate(family, u))
        return (q @ b).reshape(-1)

    sol = _solve(rhs, np.eye(n).reshape(-1), (s, t), rtol=rtol, dense=True)
    q = sol.y[:, -1].reshape(n, n)
    return Propagator(
        s=s,
        t=t,
        matrix=q,
        with_potential=with_potential,
        rtol=rtol,
        nfev=int(sol.nfev),
        steps=len(sol.t) - 1,
    )


def markov_transition(family, gens, s, t, rtol=ODE_RTOL) -> Propagator:
    """p_{s,t}: the propagator of the pure Markov dynamics (potential off)."""
    return propagator(family, gens, s, t, with_potential=False, rtol=rtol)


def invariance_gap(prop: Propagator, family: EvolvingFamily) -> float:
    """max_y |(mu_s Q)(y) - mu_t(y)|; small by the forward equation."""
    mu_s = measure_at(family, prop.s).weights
    mu_t = measure_at(family, prop.t).weights
    return float(np.max(np.abs(mu_s @ prop.matrix - mu_t)))


def backward_consistency(
    prop: Propagator,
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    n_funcs: int = 5,
    seed: int = 0,
    rtol: float = ODE_RTOL,
) -> float:
    """Re-solve the backward equation for random terminal functions and
    report the max deviation from the forward-solved matrix."""
    rng = stream(seed, 17)
    worst = 0.0
    for _ in range(n_funcs):
        f = rng.standard_normal(family.n)

        def rhs(u, g):
            b = gens.intensity(u) * gens.rates(u) @ g
            if prop.with_potential:
                b = b - centered_rate(family, u) * g
            return -b  # -d/ds g_s = lambda_s L_s g_s - H_s g_s

        sol = _solve(rhs, f, (prop.t, prop.s), rtol=rtol)
        g_s = sol.y[:, -1]
        worst = max(worst, float(np.max(np.abs(g_s - prop.apply(f)))))
    return worst


# ----------------------------------------------------------------------------
# Feynman-Kac Monte Carlo
# ----------------------------------------------------------------------------

def _intensity_bound(gens: GeneratorSchedule, a: float, b: float, grid: int = 33, safety: float = 1.2) -> float:
    ts = np.linspace(a, b, grid)
    lam = max(gens.intensity(float(u)) for u in ts)
    if gens.exit_bound is not None:
        exit_rate = gens.exit_bound
    else:
        exit_rate = max(float(np.max(-np.diag(gens.rates(float(u))))) for u in ts)
    return safety * lam * exit_rate + 1e-12


def fk_estimate(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    s: float,
    x: int,
    t: float,
    f: np.ndarray,
    paths: int,
    seed: int,
    safety: float = 1.2,
):
    """Monte Carlo estimate of (q_{s,t} f)(x) by exact thinning.

    Simulates ``paths`` copies of the time-inhomogeneous jump process with
    generator lambda_u L_u from (s, x); path weights exp(-int H) use the
    exact closed form of the potential integral along the piecewise-constant
    path.  Returns (estimate, standard error).
    """
    if paths < 1:
        raise ModelError("need at least one path")
    f = np.asarray(f, dtype=float)
    rng = stream(seed, 23)
    bound = _intensity_bound(gens, s, t, safety=safety)
    states = np.full(paths, int(x), dtype=np.int64)
    acc = np.zeros(paths)                      # sum of U_end - U_start over closed segments
    seg_start = np.full(paths, float(s))
    times = np.full(paths, float(s))
    active = np.ones(paths, dtype=bool)

    if bound <= 1e-12:
        active[:] = False  # lambda == 0: no jumps ever

    while active.any():
        idx = np.nonzero(active)[0]
        tau = times[idx] + rng.exponential(1.0 / bound, size=idx.size)
        over = tau >= t
        done = idx[over]
        times[done] = t
        active[done] = False
        idx = idx[~over]
        tau = tau[~over]
        if idx.size == 0:
            continue
        times[idx] = tau

        rows = _rate_rows(family, gens, tau, states[idx])
        lam = np.array([gens.intensity(float(u)) for u in tau])
        exit_rates = lam * rows.sum(axis=1)
        if np.any(exit_rates > bound * (1.0 + 1e-9)):
            raise SimulationError(
                "jump rate exceeded its thinning bound; increase the safety factor"
            )
        u = rng.random(idx.size)
        accept = u < exit_rates / bound
        jid = idx[accept]
        if jid.size:
            rws = rows[accept]
            # close the current segment at the jump time
            acc[jid] += family.potential.values_at(tau[accept], states[jid])
            acc[jid] -= family.potential.values_at(seg_start[jid], states[jid])
            seg_start[jid] = tau[accept]
            cdf = np.cumsum(rws, axis=1)
            draw = rng.random(jid.size) * cdf[:, -1]
            states[jid] = (cdf < draw[:, None]).sum(axis=1)

    # close the trailing segment at t
    acc += family.potential.values_at(np.full(paths, float(t)), states)
    acc -= family.potential.values_at(seg_start, states)
    dlogz = measure_at(family, t).log_z - measure_at(family, s).log_z
    weights = np.exp(-(acc + dlogz))
    vals = weights * f[states]
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(paths)) if paths > 1 else 0.0
    return est, se


def _rate_rows(family, gens, ts, xs) -> np.ndarray:
    """Off-diagonal generator rows L_{ts[k]}(xs[k], .), batched."""
    if gens.rate_rows_fn is not None:
        return gens.rate_rows_fn(ts, xs)
    rows = np.empty((len(ts), family.n))
    for k, (u, x) in enumerate(zip(ts, xs)):
        r = gens.rates(float(u))[int(x)].copy()
        r[int(x)] = 0.0
        rows[k] = r
    return rows


# ----------------------------------------------------------------------------
# Operator norms
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NormEstimate:
    value: float
    kind: str                 # "exact" or "lower"
    upper_bound: float | None = None

    def as_dict(self):
        return {"value": self.value, "kind": self.kind, "upper_bound": self.upper_bound}


def _dual_step(z: np.ndarray, a: float) -> np.ndarray:
    """argmax of <z, x> over the unit ||.||_a ball."""
    if np.isinf(a):
        return np.sign(z) + (z == 0.0)
    if a == 1.0:
        x = np.zeros_like(z)
        i = int(np.argmax(np.abs(z)))
        x[i] = np.sign(z[i]) or 1.0
        return x
    astar = a / (a - 1.0)
    w = np.abs(z) ** (astar - 1.0) * np.sign(z)
    nrm = np.linalg.norm(w, ord=a)
    return w / nrm if nrm > 0 else w


def _vec_norm(y: np.ndarray, b: float) -> float:
    if np.isinf(b):
        return float(np.max(np.abs(y)))
    return float(np.sum(np.abs(y) ** b) ** (1.0 / b))


def _induced_norm_lower(a_mat: np.ndarray, a: float, b: float, starts: list[np.ndarray]) -> float:
    """Best ratio ||A x||_b / ||x||_a found by projected power ascent."""
    best = 0.0
    for x0 in starts:
        x = np.asarray(x0, dtype=float)
        nx = _vec_norm(x, a)
        if nx == 0.0:
            continue
        x = x / nx
        last = -np.inf
        for _ in range(200):
            y = a_mat @ x
            val = _vec_norm(y, b)
            best = max(best, val)
            if val <= 0.0 or abs(val - last) <= 1e-13 * max(1.0, val):
                break
            last = val
            if np.isinf(b):
                i = int(np.argmax(np.abs(y)))
                u = np.zeros_like(y)
                u[i] = np.sign(y[i]) or 1.0
            else:
                u = np.sign(y) * np.abs(y) ** (b - 1.0)
            z = a_mat.T @ u
            x_new = _dual_step(z, a)
            nx = _vec_norm(x_new, a)
            if nx == 0.0:
                break
            x = x_new / nx
    return best


def _weighted_matrix(prop: Propagator, mu_s, mu_t, b: float, a: float) -> np.ndarray:
    """A with ||A g||_b / ||g||_a = ||Q f||_{L^b(mu_s)} / ||f||_{L^a(mu_t)}."""
    ds = np.ones_like(mu_s) if np.isinf(b) else mu_s ** (1.0 / b)
    dt = np.ones_like(mu_t) if np.isinf(a) else mu_t ** (-1.0 / a)
    return ds[:, None] * prop.matrix * dt[None, :]


def _starts(n: int, mu_t, a: float, n_random: int, rng) -> list[np.ndarray]:
    starts = [np.eye(n)[i] for i in range(n)]
    starts.append(np.ones(n) if np.isinf(a) else mu_t ** (1.0 / a))  # constant f
    starts.extend(np.abs(rng.standard_normal(n)) for _ in range(n_random))
    starts.extend(rng.standard_normal(n) for _ in range(max(0, n_random // 2)))
    return starts


def operator_norm(
    prop: Propagator,
    family: EvolvingFamily,
    p: float,
    n_random: int = 32,
    seed: int = 0,
) -> NormEstimate:
    """C_{s,t}(p): lower estimate by ascent, exact for p in {1, 2, inf}.

    The companion upper bound is the growth certificate exp(int osc H).
    """
    mu_s = measure_at(family, prop.s).weights
    mu_t = measure_at(family, prop.t).weights
    upper = growth_bound(family, prop.s, prop.t) if prop.with_potential else 1.0
    if p == 1:
        # positivity + invariance give the norm exactly
        return NormEstimate(value=1.0, kind="exact", upper_bound=upper)
    a_mat = _weighted_matrix(prop, mu_s, mu_t, b=p, a=p)
    if p == 2:
        return NormEstimate(value=float(np.linalg.svd(a_mat, compute_uv=False)[0]), kind="exact", upper_bound=upper)
    if np.isinf(p):
        return NormEstimate(value=float(np.max(np.abs(a_mat).sum(axis=1))), kind="exact", upper_bound=upper)
    rng = stream(seed, 31)
    val = _induced_norm_lower(a_mat, a=p, b=p, starts=_starts(family.n, mu_t, p, n_random, rng))
    return NormEstimate(value=val, kind="lower", upper_bound=upper)


def operator_norm_pair(
    prop: Propagator,
    family: EvolvingFamily,
    p: float,
    q: float,
    n_random: int = 32,
    seed: int = 0,
) -> NormEstimate:
    """C_{s,t}(p, q): max of the two mixed ratios, clamped below at 1.

    r solves 1/p = 1/q + 1/r (r = p for q = inf).
    """
    if not (2 <= p <= q):
        raise ModelError(f"need 2 <= p <= q, got p={p}, q={q}")
    mu_s = measure_at(family, prop.s).weights
    mu_t = measure_at(family, prop.t).weights
    r = p if np.isinf(q) else 1.0 / (1.0 / p - 1.0 / q)
    rng = stream(seed, 37)

    def ratio(b, a):
        a_mat = _weighted_matrix(prop, mu_s, mu_t, b=b, a=a)
        if a == b == 2:
            return float(np.linalg.svd(a_mat, compute_uv=False)[0]), "exact"
        if np.isinf(a) and np.isinf(b):
            return float(np.max(np.abs(a_mat).sum(axis=1))), "exact"
        return _induced_norm_lower(a_mat, a=a, b=b, starts=_starts(family.n, mu_t, a, n_random, rng)), "lower"

    v1, k1 = ratio(b=2 * r, a=p)       # ||qf||_{2r} vs ||f||_p
    v2, k2 = ratio(b=p, a=p / 2.0)     # ||qf||_p  vs ||f||_{p/2}
    value = max(v1, v2, 1.0)
    kind = "exact" if (k1 == k2 == "exact") else "lower"
    return NormEstimate(value=value, kind=kind, upper_bound=None)


def operator_norms(prop, family, p, q, n_random=32, seed=0):
    return (
        operator_norm(prop, family, p, n_random=n_random, seed=seed),
        operator_norm_pair(prop, family, p, q, n_random=n_random, seed=seed),
    )


def growth_bound(family: EvolvingFamily, s: float, t: float, rel_tol: float = 1e-9) -> float:
    """exp(int_s^t osc(H_r) dr): certified growth factor for all L^p norms."""
    if t == s:
        return 1.0
    val, _ = integrate.quad(lambda u: oscillation(family, float(u)), s, t, epsrel=rel_tol, epsabs=1e-13, limit=200)
    return float(np.exp(val))


@dataclass(frozen=True)
class WindowIntegral:
    """sup_tau int_0^{(tau-delta)+} ||H_s||_{L^q} C_{s,tau}(p,q)^2 ds."""

    value: float
    coarse_bound: float
    delta: float
    tau_grid: np.ndarray
    per_tau: np.ndarray
    norm_kind: str

    def as_dict(self):
        return {
            "value": self.value,
            "coarse_bound": self.coarse_bound,
            "delta": self.delta,
            "tau_grid": self.tau_grid.tolist(),
            "per_tau": self.per_tau.tolist(),
            "norm_kind": self.norm_kind,
        }


def window_norm_integral(
    family: EvolvingFamily,
    gens: GeneratorSchedule,
    p: float,
    q: float,
    delta: float,
    t: float,
    omega: float | None = None,
    tau_nodes: int = 7,
    s_nodes: int = 7,
    n_random: int = 8,
    seed: int = 0,
) -> WindowIntegral:
    """Grid/quadrature surrogate for the windowed norm integral.

    The outer supremum runs over a tau grid; the inner integral uses
    Gauss-Legendre nodes, each requiring a propagator solve plus a norm
    ascent, so the value is a lower estimate of the true constant.  The
    coarse companion bound t * omega * sup C^2 is returned alongside.
    """
    if delta <= 0:
        raise ModelError("delta must be positive")
    taus = np.linspace(0.0, t, tau_nodes)
    per_tau = np.zeros(tau_nodes)
    sup_c2 = 0.0
    kind = "exact"
    gl_x, gl_w = np.polynomial.legendre.leggauss(s_nodes)
    for k, tau in enumerate(taus):
        upper = tau - delta
        if upper <= 0.0:
            continue
        ss = 0.5 * upper * (gl_x + 1.0)
        ws = 0.5 * upper * gl_w
        total = 0.0
        for sv, wv in zip(ss, ws):
            prop = propagator(family, gens, float(sv), float(tau))
            est = operator_norm_pair(prop, family, p, q, n_random=n_random, seed=seed)
            if est.kind == "lower":
                kind = "lower"
            sup_c2 = max(sup_c2, est.value**2)
            total += wv * rate_norm(family, float(sv), q) * est.value**2
        per_tau[k] = total
    if omega is None:
        omega = oscillation_table(family, t, 129).sup
    coarse = t * omega * sup_c2
    return WindowIntegral(
        value=float(per_tau.max(initial=0.0)),
        coarse_bound=float(coarse),
        delta=delta,
        tau_grid=taus,
        per_tau=per_tau,
        norm_kind=kind,
    )
