"""Functional-inequality constants for reversible chains.

Exact quantities (dense symmetric eigensolves):
  * Poincare constant = inverse spectral gap,
  * weighted constant A = sup over mean-zero f of (-int H f^2 dmu) / E(f)
    (generalized eigenvalue on the mean-zero subspace, clamped at 0),
  * B = |int H f dmu|^2 / E(f) maximized = <H, g>_mu with (-L) g = H
    (the squared dual Dirichlet norm of H).

The log-Sobolev constant

    gamma = sup { int f^2 log|f| dmu / E(f) : <f^2, mu> = 1, f != 1 }

is bracketed: projected-gradient ascent from many restarts gives a lower
estimate, and one-dimensional birth-death chains admit certified upper
bounds through cumulative-sum tables (B_k, beta_k).  Table factors are
summed in display order with a max-shifted compensated sum, so strongly
concentrated measures (Gaussian tails far below float range) stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._util import kahan_sum
from .errors import CertificationError, DisconnectedChainError, ModelError
from .dynamics import check_detailed_balance, dirichlet_matrix

__all__ = [
    "poincare_constant",
    "rate_constants",
    "lsi_lower_estimate",
    "BirthDeathSpec",
    "birth_death_rates",
    "hardy_poincare_tables",
    "hardy_lsi_tables",
    "HardyTables",
    "birth_death_bounds",
    "discrete_gauss",
    "GaussModelReport",
    "lsi_upper_for_profile",
    "moving_gauss_drift_check",
    "ConstantsReport",
    "constants_report",
]

GAP_TOL = 1e-11


def _symmetrized(rates: np.ndarray, log_mu: np.ndarray) -> np.ndarray:
    """D^{1/2} L D^{-1/2} built from log weights (safe for underflowing mu)."""
    half = 0.5 * (log_mu[:, None] - log_mu[None, :])
    m = rates * np.exp(half)
    np.fill_diagonal(m, np.diag(rates))
    return 0.5 * (m + m.T)


def poincare_constant(rates: np.ndarray, mu: np.ndarray, log_mu: np.ndarray | None = None) -> float:
    """Inverse spectral gap of the reversible pair (L, mu).

    Raises DisconnectedChainError when the gap vanishes (a single global
    constant does not exist; use the partitioned path instead).
    """
    rates = np.asarray(rates, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if log_mu is None:
        check_detailed_balance(rates, mu)
        log_mu = np.log(np.maximum(mu, 1e-300))
    m = _symmetrized(rates, np.asarray(log_mu, dtype=float))
    eigs = np.sort(linalg.eigvalsh(-m))
    scale = max(1.0, float(np.max(np.abs(eigs))))
    if eigs[1] < GAP_TOL * scale:
        raise DisconnectedChainError(
            f"spectral gap {eigs[1]:.3e} is numerically zero; chain is disconnected"
        )
    return 1.0 / float(eigs[1])


def _mean_zero_basis(mu: np.ndarray) -> np.ndarray:
    return linalg.null_space(mu[None, :])


def rate_constants(rates: np.ndarray, mu: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    """(A, B) for the centered rate h.

    A: largest generalized eigenvalue of (diag(-h mu), Dirichlet form) on the
    mean-zero subspace, clamped below at 0.  B: <h, g>_mu where (-L) g = h.
    """
    rates = np.asarray(rates, dtype=float)
    mu = np.asarray(mu, dtype=float)
    h = np.asarray(h, dtype=float)
    if abs(float(h @ mu)) > 1e-10:
        raise ModelError("rate vector must be centered under mu")
    e_mat = dirichlet_matrix(rates, mu)
    v = _mean_zero_basis(mu)
    e_sub = v.T @ e_mat @ v
    scale = max(1.0, float(np.max(np.abs(e_sub))))
    if np.min(linalg.eigvalsh(e_sub)) < GAP_TOL * scale:
        raise DisconnectedChainError("Dirichlet form singular on the mean-zero subspace")
    n_mat = v.T @ np.diag(-h * mu) @ v
    a_val = max(0.0, float(np.max(linalg.eigvalsh(n_mat, e_sub))))

    g, *_ = np.linalg.lstsq(-rates, h, rcond=None)
    b_val = float((h * g) @ mu)
    return a_val, b_val


def lsi_lower_estimate(
    rates: np.ndarray,
    mu: np.ndarray,
    restarts: int = 64,
    iters: int = 400,
    seed: int = 0,
) -> tuple[float, str]:
    """Lower estimate of gamma by projected-gradient ascent on <f^2,mu> = 1.

    Restarts: spectral modes of the symmetrized generator, unit-mass
    indicator directions, perturbed constants, and random draws; the best
    feasible ratio found is returned (a certified lower bound of the sup).
    """
    rates = np.asarray(rates, dtype=float)
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    e_mat = dirichlet_matrix(rates, mu)
    log_mu = np.log(np.maximum(mu, 1e-300))
    m_sym = _symmetrized(rates, log_mu)
    _, vecs = linalg.eigh(-m_sym)
    spectral = vecs[:, 1 : min(6, n)] / np.sqrt(np.maximum(mu, 1e-100))[:, None]

    rng = np.random.default_rng(seed)
    cols = [spectral]
    visible = np.nonzero(mu > 1e-100)[0]      # indicator starts only where mass exists
    ind = np.zeros((n, visible.size))
    ind[visible, np.arange(visible.size)] = 1.0 / np.sqrt(mu[visible])
    cols.append(ind)
    cols.append(1.0 + 0.05 * spectral)        # near-constant
    n_rand = max(0, restarts - sum(c.shape[1] for c in cols))
    if n_rand:
        cols.append(rng.standard_normal((n, n_rand)))
    f = np.concatenate(cols, axis=1)

    def project(f):
        nrm = np.sqrt(np.maximum((f * f * mu[:, None]).sum(axis=0), 1e-300))
        return f / nrm

    def objective(f):
        f2 = f * f
        safe_log = np.where(f2 > 0.0, np.log(np.maximum(f2, 1e-300)), 0.0)
        num = 0.5 * ((f2 * safe_log).T @ mu)
        den = (f * (e_mat @ f)).sum(axis=0)
        ratio = np.where(den > 1e-14, num / np.maximum(den, 1e-300), -np.inf)
        return num, den, ratio

    f = project(f)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        _, _, ratio = objective(f)
        best = float(np.max(ratio[np.isfinite(ratio)], initial=0.0))
        step = np.full(f.shape[1], 0.5)
        for _ in range(iters):
            f2 = f * f
            safe_log = np.where(f2 > 0.0, np.log(np.maximum(f2, 1e-300)), 0.0)
            num = 0.5 * ((f2 * safe_log).T @ mu)
            den = np.maximum((f * (e_mat @ f)).sum(axis=0), 1e-300)
            ratio = num / den
            grad_num = (f * safe_log + f) * mu[:, None]
            grad = (grad_num - 2.0 * ratio[None, :] * (e_mat @ f)) / den[None, :]
            cand = project(f + step[None, :] * np.nan_to_num(grad, posinf=0.0, neginf=0.0))
            _, _, new_ratio = objective(cand)
            improved = new_ratio > ratio  # nan never improves, column keeps its state
            f = np.where(improved[None, :], cand, f)
            step = np.where(improved, step * 1.1, step * 0.5)
            finite = np.isfinite(new_ratio)
            if finite.any():
                best = max(best, float(np.max(new_ratio[finite])))
            if np.all(step < 1e-14):
                break
    return max(best, 0.0), f"projected-ascent[{restarts} restarts]"


# ----------------------------------------------------------------------------
# One-dimensional birth-death machinery
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BirthDeathSpec:
    """Integer interval a..a+width-1 containing 0, with log weights.

    Tail parameters (s, rho, alpha) feed the closed-form bounds; conditions
    (i) mu(x) <= rho mu(y) on [-s, s] and (ii) geometric tail decay at rate
    alpha beyond +-s are verified by enumeration, never assumed.
    """

    a: int
    width: int
    log_weights: np.ndarray  # normalized: logsumexp == 0
    s: int = 0
    rho: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not (self.a <= 0 <= self.b):
            raise ModelError("interval must contain 0")
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (self.width,):
            raise ModelError("need one log weight per state")

    @property
    def b(self) -> int:
        return self.a + self.width - 1

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def index(self, coord: int) -> int:
        return coord - self.a

    def log_mu(self, coord) -> np.ndarray:
        return self.log_weights[np.asarray(coord) - self.a]

    @property
    def r(self) -> float:
        return min(1.0 / (1.0 - self.alpha), float(self.width))

    @property
    def u(self) -> float:
        return float(min(self.s, self.width))

    def condition_violations(self, tol: float = 1e-9) -> list[str]:
        out = []
        log_rho = np.log(self.rho)
        log_alpha = np.log(self.alpha)
        lo, hi = max(-self.s, self.a), min(self.s, self.b)
        for x in range(lo, hi + 1):
            for y in range(lo, hi + 1):
                if self.log_mu(x) > log_rho + self.log_mu(y) + tol:
                    out.append(f"(i) fails at x={x}, y={y}")
        for x in range(max(self.s, self.a), self.b):
            if self.log_mu(x + 1) > log_alpha + self.log_mu(x) + tol:
                out.append(f"(ii) fails at x={x} (right tail)")
        for x in range(-self.s, self.a, -1):
            if self.log_mu(x - 1) > log_alpha + self.log_mu(x) + tol:
                out.append(f"(ii) fails at x={x} (left tail)")
        return out


def from_weights(a: int, log_weights, s=0, rho=1.0, alpha=0.5) -> BirthDeathSpec:
    lw = np.asarray(log_weights, dtype=float)
    m = float(np.max(lw))
    lw = lw - (m + np.log(np.exp(lw - m).sum()))
    return BirthDeathSpec(a=a, width=lw.size, log_weights=lw, s=s, rho=rho, alpha=alpha)


def birth_death_rates(spec: BirthDeathSpec) -> np.ndarray:
    """Nearest-neighbor Metropolis rates (1/2) min(mu(y)/mu(x), 1)."""
    n = spec.width
    lw = spec.log_weights
    rates = np.zeros((n, n))
    for i in range(n - 1):
        rates[i, i + 1] = 0.5 * np.exp(min(lw[i + 1] - lw[i], 0.0))
        rates[i + 1, i] = 0.5 * np.exp(min(lw[i] - lw[i + 1], 0.0))
    np.fill_diagonal(rates, -rates.sum(axis=1))
    return rates


def _log_factor(log_terms) -> float:
    """log of a sum of positive terms given in display order (max shift +
    compensated sum keeps the order and avoids overflow)."""
    arr = np.asarray(log_terms, dtype=float)
    if arr.size == 0:
        return -np.inf
    m = float(np.max(arr))
    return m + float(np.log(kahan_sum(np.exp(arr - m))))


@dataclass(frozen=True)
class HardyTables:
    """Cumulative-sum tables for a birth-death chain split at 0."""

    ks_pos: np.ndarray
    b_pos: np.ndarray
    beta_pos: np.ndarray
    ks_neg: np.ndarray
    b_neg: np.ndarray
    beta_neg: np.ndarray
    log_inv_mu_star: float

    @property
    def b_plus(self) -> float:
        return float(np.max(self.b_pos, initial=0.0))

    @property
    def b_minus(self) -> float:
        return float(np.max(self.b_neg, initial=0.0))

    @property
    def beta_plus(self) -> float:
        return float(np.max(self.beta_pos, initial=0.0))

    @property
    def beta_minus(self) -> float:
        return float(np.max(self.beta_neg, initial=0.0))

    @property
    def poincare_bound(self) -> float:
        """4 max(B+, B-); empty sides contribute 0."""
        return 4.0 * max(self.b_plus, self.b_minus)

    @property
    def lsi_bound(self) -> float:
        """20 max(beta+, beta-)."""
        return 20.0 * max(self.beta_plus, self.beta_minus)

    @property
    def lsi_rough_bound(self) -> float:
        """Via beta_k <= 2 B_k log(1/mu_*): 40 max(B+,B-) log(1/mu_*)."""
        return 40.0 * max(self.b_plus, self.b_minus) * self.log_inv_mu_star

    def rows(self):
        for k, bv, betav in zip(self.ks_neg, self.b_neg, self.beta_neg):
            yield int(k), float(bv), float(betav)
        for k, bv, betav in zip(self.ks_pos, self.b_pos, self.beta_pos):
            yield int(k), float(bv), float(betav)


def _hardy_tables(spec: BirthDeathSpec) -> HardyTables:
    lw = spec.log_weights
    a, b = spec.a, spec.b
    ks_pos, logf1_pos, logf2_pos = [], [], []
    for k in range(1, b + 1):
        inv_terms = [-min(spec.log_mu(x - 1), spec.log_mu(x)) for x in range(1, k + 1)]
        tail_terms = [spec.log_mu(x) for x in range(k, b + 1)]
        ks_pos.append(k)
        logf1_pos.append(_log_factor(inv_terms))
        logf2_pos.append(_log_factor(tail_terms))
    ks_neg, logf1_neg, logf2_neg = [], [], []
    for k in range(a, 0):
        inv_terms = [-min(spec.log_mu(x + 1), spec.log_mu(x)) for x in range(k, 0)]
        tail_terms = [spec.log_mu(x) for x in range(a, k + 1)]
        ks_neg.append(k)
        logf1_neg.append(_log_factor(inv_terms))
        logf2_neg.append(_log_factor(tail_terms))

    def assemble(logf1, logf2):
        logf1 = np.asarray(logf1, dtype=float)
        logf2 = np.asarray(logf2, dtype=float)
        b_vals = np.exp(logf1 + logf2)
        beta_vals = 2.0 * b_vals * np.abs(logf2)
        return b_vals, beta_vals

    b_pos, beta_pos = assemble(logf1_pos, logf2_pos)
    b_neg, beta_neg = assemble(logf1_neg, logf2_neg)
    return HardyTables(
        ks_pos=np.asarray(ks_pos, dtype=int),
        b_pos=b_pos,
        beta_pos=beta_pos,
        ks_neg=np.asarray(ks_neg, dtype=int),
        b_neg=b_neg,
        beta_neg=beta_neg,
        log_inv_mu_star=float(-np.min(lw)),
    )


def hardy_poincare_tables(spec: BirthDeathSpec) -> HardyTables:
    """B_k tables and the bound C_Poi <= 4 max(B+, B-)."""
    return _hardy_tables(spec)


def hardy_lsi_tables(spec: BirthDeathSpec) -> HardyTables:
    """beta_k tables (with the |log tail| factor) and gamma <= 20 max(beta+-)."""
    return _hardy_tables(spec)


def birth_death_bounds(spec: BirthDeathSpec) -> tuple[float, float]:
    """Closed-form bounds from the verified tail parameters:

        C_Poi <= 4 rho u r + max(4 r^2, rho u^2)
        gamma <= 10 (4 rho u r + max(rho u^2, 4 r^2)) log(1/mu_*)
    """
    violations = spec.condition_violations()
    if violations:
        raise CertificationError("tail conditions (i)/(ii) fail", violations=violations)
    r, u, rho = spec.r, spec.u, spec.rho
    poi = 4.0 * rho * u * r + max(4.0 * r * r, rho * u * u)
    log_inv_mu_star = float(-np.min(spec.log_weights))
    lsi = 10.0 * (4.0 * rho * u * r + max(rho * u * u, 4.0 * r * r)) * log_inv_mu_star
    return poi, lsi


@dataclass(frozen=True)
class GaussModelReport:
    spec: BirthDeathSpec
    sigma: float
    poincare_exact: float
    hardy: HardyTables
    thm_poincare: float
    thm_lsi: float
    square_width_bound: float   # 30 ((sigma ^ Delta) v 2)^2
    lsi_display_bound: float    # 300 (Delta/(sigma^1))^2 + 300 ((sigma^Delta) v 2)^2 log Delta
    lsi_lower: float

    def as_dict(self):
        return {
            "sigma": self.sigma,
            "a": self.spec.a,
            "width": self.spec.width,
            "s": self.spec.s,
            "rho": self.spec.rho,
            "alpha": self.spec.alpha,
            "poincare_exact": self.poincare_exact,
            "hardy_poincare_bound": self.hardy.poincare_bound,
            "thm_poincare": self.thm_poincare,
            "square_width_bound": self.square_width_bound,
            "lsi_lower": self.lsi_lower,
            "hardy_lsi_bound": self.hardy.lsi_bound,
            "thm_lsi": self.thm_lsi,
            "lsi_display_bound": self.lsi_display_bound,
            "table": [list(row) for row in self.hardy.rows()],
        }


def discrete_gauss(sigma: float, a: int, width: int, lsi_restarts: int = 64, seed: int = 0) -> GaussModelReport:
    """Discrete Gaussian mu(x) ~ exp(-x^2/(2 sigma^2)) on a..a+width-1.

    Builds the spec with s = floor(sigma), rho = e^{1/2},
    alpha = exp(-(floor(sigma)+1/2)/sigma^2), verifies the tail conditions by
    enumeration, and evaluates the whole certification chain.
    """
    if sigma <= 0:
        raise ModelError("sigma must be positive")
    coords = np.arange(a, a + width)
    lw = -coords.astype(float) ** 2 / (2.0 * sigma * sigma)
    s = int(np.floor(sigma))
    rho = float(np.exp(0.5))
    alpha = float(np.exp(-(s + 0.5) / (sigma * sigma)))
    spec = from_weights(a, lw, s=s, rho=rho, alpha=alpha)
    violations = spec.condition_violations()
    if violations:
        raise CertificationError(
            "discrete Gauss tail conditions failed (internal inconsistency)", violations=violations
        )
    rates = birth_death_rates(spec)
    poi_exact = poincare_constant(rates, spec.mu, log_mu=spec.log_weights)
    tables = _hardy_tables(spec)
    thm_poi, thm_lsi = birth_death_bounds(spec)
    delta = float(width)
    sq = 30.0 * (max(min(sigma, delta), 2.0)) ** 2
    disp = 300.0 * (delta / min(sigma, 1.0)) ** 2 + 300.0 * (max(min(sigma, delta), 2.0)) ** 2 * np.log(delta)
    lsi_lo, _ = lsi_lower_estimate(rates, spec.mu, restarts=lsi_restarts, seed=seed)
    return GaussModelReport(
        spec=spec,
        sigma=sigma,
        poincare_exact=poi_exact,
        hardy=tables,
        thm_poincare=thm_poi,
        thm_lsi=thm_lsi,
        square_width_bound=sq,
        lsi_display_bound=float(disp),
        lsi_lower=lsi_lo,
    )


def lsi_upper_for_profile(log_weights: np.ndarray) -> float:
    """Certified LSI upper bound for the nearest-neighbor Metropolis chain of
    a weight profile: 20 max(beta+-) with the cumulative sums split at a
    median state (the classical one-dimensional criterion)."""
    lw = np.asarray(log_weights, dtype=float)
    m = float(np.max(lw))
    probs = np.exp(lw - m)
    probs /= probs.sum()
    median = int(np.searchsorted(np.cumsum(probs), 0.5))
    spec = from_weights(-median, lw)
    return _hardy_tables(spec).lsi_bound


def moving_gauss_drift_check(mean_rate, width_rate, sigma, delta) -> dict:
    """Relative-change condition 2|sigma'|/sigma + |m'|/Delta <= sigma^2/Delta^2
    and the implied oscillation bound (2|sigma'|/sigma + |m'|/Delta) Delta^2/sigma^2."""
    bracket = 2.0 * abs(width_rate) / sigma + abs(mean_rate) / delta
    rhs = sigma * sigma / (delta * delta)
    return {
        "bracket": bracket,
        "threshold": rhs,
        "holds": bool(bracket <= rhs + 1e-12),
        "osc_bound": bracket * delta * delta / (sigma * sigma),
    }


# ----------------------------------------------------------------------------
# Per-time constants report
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantsReport:
    t: float
    poincare: float
    rate_weighted: float         # A
    rate_dual_norm_sq: float     # B
    lsi_lower: float
    lsi_upper: float | None
    lsi_method: str
    certified: bool
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.lsi_upper is not None and self.lsi_lower > self.lsi_upper + 1e-9:
            raise ModelError(
                f"LSI bracket inverted at t={self.t}: lower {self.lsi_lower} > upper {self.lsi_upper}"
            )

    def as_dict(self):
        return {
            "t": self.t,
            "poincare": self.poincare,
            "rate_weighted": self.rate_weighted,
            "rate_dual_norm_sq": self.rate_dual_norm_sq,
            "lsi_lower": self.lsi_lower,
            "lsi_upper": self.lsi_upper,
            "lsi_method": self.lsi_method,
            "certified": self.certified,
            "blocks": [dict(b) for b in self.blocks],
        }


def _is_nearest_neighbor_metropolis(rates, log_mu, coords, tol=1e-9) -> bool:
    order = np.argsort(coords)
    n = len(coords)
    r_ord = rates[np.ix_(order, order)]
    lw_ord = log_mu[order]
    expected = np.zeros_like(r_ord)
    for i in range(n - 1):
        if coords[order[i + 1]] - coords[order[i]] != 1:
            return False
        expected[i, i + 1] = 0.5 * np.exp(min(lw_ord[i + 1] - lw_ord[i], 0.0))
        expected[i + 1, i] = 0.5 * np.exp(min(lw_ord[i] - lw_ord[i + 1], 0.0))
    off = r_ord - np.diag(np.diag(r_ord))
    return bool(np.max(np.abs(off - expected)) <= tol)


def constants_report(family, gens, t: float, lsi_restarts: int = 64, seed: int = 0) -> ConstantsReport:
    """All spectral constants of (L_t, mu_t) at one time.

    For generators recognized as nearest-neighbor Metropolis chains on a
    one-dimensional embedding the LSI upper bound is certified through the
    cumulative-sum tables; otherwise the report is flagged uncertified.
    With a partitioned space the constants are computed per block and the
    report carries the blockwise maxima.
    """
    from .model import centered_rate, measure_at  # local import to avoid a cycle

    mu = measure_at(family, t).weights
    logw, _ = family.log_weights(t)
    rates = gens.rates(t)
    h = centered_rate(family, t)
    blocks_out = []
    if family.space.partition is not None and len(family.space.partition) > 1:
        poi_vals, a_vals, b_vals, lo_vals, up_vals = [], [], [], [], []
        certified = True
        for bi, block in enumerate(family.space.partition):
            idx = np.asarray(block, dtype=int)
            sub_rates = rates[np.ix_(idx, idx)]
            mass = float(mu[idx].sum())
            sub_mu = mu[idx] / mass
            sub_lw = logw[idx] - np.log(mass)
            sub_h = h[idx] - float(h[idx] @ sub_mu)
            poi = poincare_constant(sub_rates, sub_mu, log_mu=sub_lw)
            a_val, b_val = rate_constants(sub_rates, sub_mu, sub_h)
            lo, method = lsi_lower_estimate(sub_rates, sub_mu, restarts=lsi_restarts, seed=seed + bi)
            up = None
            if family.space.embedding is not None:
                coords = np.asarray(family.space.embedding)[idx]
                if _is_nearest_neighbor_metropolis(sub_rates, sub_lw, coords):
                    up = lsi_upper_for_profile(sub_lw)
            certified = certified and up is not None
            poi_vals.append(poi)
            a_vals.append(a_val)
            b_vals.append(b_val)
            lo_vals.append(lo)
            up_vals.append(up if up is not None else np.nan)
            blocks_out.append(
                {
                    "block": bi,
                    "poincare": poi,
                    "rate_weighted": a_val,
                    "rate_dual_norm_sq": b_val,
                    "lsi_lower": lo,
                    "lsi_upper": up,
                }
            )
        return ConstantsReport(
            t=t,
            poincare=float(np.max(poi_vals)),
            rate_weighted=float(np.max(a_vals)),
            rate_dual_norm_sq=float(np.max(b_vals)),
            lsi_lower=float(np.max(lo_vals)),
            lsi_upper=float(np.max(up_vals)) if certified else None,
            lsi_method="blockwise-max",
            certified=certified,
            blocks=blocks_out,
        )

    poi = poincare_constant(rates, mu, log_mu=logw)
    a_val, b_val = rate_constants(rates, mu, h)
    lo, method = lsi_lower_estimate(rates, mu, restarts=lsi_restarts, seed=seed)
    up = None
    if family.space.embedding is not None and _is_nearest_neighbor_metropolis(
        rates, logw, np.asarray(family.space.embedding)
    ):
        up = lsi_upper_for_profile(logw)
    elif gens.components is not None:
        # tensorization: the product constant is the max of component ones,
        # so certified component uppers certify the product
        uppers = []
        for fam_c, gen_c in gens.components:
            rep_c = constants_report(fam_c, gen_c, t, lsi_restarts=lsi_restarts, seed=seed)
            uppers.append(rep_c.lsi_upper)
        if all(u is not None for u in uppers):
            up = float(np.max(uppers))
    return ConstantsReport(
        t=t,
        poincare=poi,
        rate_weighted=a_val,
        rate_dual_norm_sq=b_val,
        lsi_lower=lo,
        lsi_upper=up,
        lsi_method=method,
        certified=up is not None,
    )
