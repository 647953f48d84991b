"""Time-inhomogeneous reversible generators.

Generators L_t are dense rate matrices in detailed balance with mu_t:

    mu_t(x) L_t(x,y) = mu_t(y) L_t(y,x).

The Metropolis construction from a symmetric proposal schedule produces this
exactly (up to floating point), and the product construction assembles a
Kronecker-sum generator that moves one coordinate at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError, ReversibilityError, SizeError
from .model import EvolvingFamily, ProductPotential, StateSpace

__all__ = [
    "ProposalSchedule",
    "GeneratorSchedule",
    "nearest_neighbor_proposal",
    "complete_proposal",
    "constant_proposal",
    "metropolis",
    "constant_intensity",
    "tabulated_intensity",
    "dirichlet_form",
    "dirichlet_matrix",
    "carre_du_champ",
    "check_detailed_balance",
    "product_chain",
]

PROPOSAL_TOL = 1e-12
DB_TOL = 1e-10


@dataclass(frozen=True)
class ProposalSchedule:
    """t -> symmetric transition matrix K_t used to propose Metropolis moves.

    ``constant_matrix`` is set when K does not depend on t; batched samplers
    use it to evaluate many generator rows at distinct times at once.
    """

    matrix_fn: Callable[[float], np.ndarray]
    label: str = "proposal"
    constant_matrix: np.ndarray | None = None

    def matrix(self, t: float) -> np.ndarray:
        if self.constant_matrix is not None:
            return self.constant_matrix  # validated at construction
        k = np.asarray(self.matrix_fn(t), dtype=float)
        _validate_proposal(k, t)
        return k


def _validate_proposal(k: np.ndarray, t) -> None:
    if not np.allclose(k, k.T, atol=PROPOSAL_TOL):
        raise ModelError(f"proposal matrix not symmetric at t={t}")
    if np.any(k < -PROPOSAL_TOL):
        raise ModelError(f"proposal matrix has negative entries at t={t}")
    if np.any(np.abs(k.sum(axis=1) - 1.0) > PROPOSAL_TOL):
        raise ModelError(f"proposal rows must sum to 1 at t={t}")


def constant_proposal(k: np.ndarray, label: str = "constant") -> ProposalSchedule:
    k = np.asarray(k, dtype=float)
    _validate_proposal(k, "all t")
    return ProposalSchedule(matrix_fn=lambda t: k, label=label, constant_matrix=k)


def nearest_neighbor_proposal(space: StateSpace) -> ProposalSchedule:
    """Propose +-1 on the integer embedding with probability 1/2 each;
    proposals leaving the space are rejected (mass stays on the diagonal).

    With a partitioned space only within-block neighbors are proposed, so
    the blocks stay disconnected under the resulting dynamics.
    """
    coords = space.coordinates().astype(int)
    n = space.n
    block_of = np.zeros(n, dtype=int)
    if space.partition is not None:
        for b, block in enumerate(space.partition):
            for i in block:
                block_of[i] = b
    k = np.zeros((n, n))
    pos = {int(coords[i]): i for i in range(n)}
    for i in range(n):
        for step in (-1, 1):
            j = pos.get(int(coords[i]) + step)
            if j is not None and block_of[i] == block_of[j]:
                k[i, j] = 0.5
    np.fill_diagonal(k, 1.0 - k.sum(axis=1))
    return constant_proposal(k, label="nearest-neighbor")


def complete_proposal(n: int) -> ProposalSchedule:
    k = np.full((n, n), 1.0 / (n - 1)) if n > 1 else np.ones((1, 1))
    if n > 1:
        np.fill_diagonal(k, 0.0)
    return constant_proposal(k, label="complete")


@dataclass(frozen=True)
class GeneratorSchedule:
    """t -> rate matrix L_t plus a continuous intensity schedule lambda_t.

    ``exit_bound`` is a certified uniform upper bound on max_x -L_t(x,x)
    (1 for any Metropolis chain built from a stochastic proposal); the
    event-driven simulators use it for exact thinning.
    """

    rates_fn: Callable[[float], np.ndarray]
    intensity_fn: Callable[[float], float]
    exit_bound: float | None = None
    label: str = "generator"
    rate_rows_fn: Callable | None = None  # batched (ts, xs) -> off-diagonal rows
    components: tuple | None = None       # (family, schedule) pairs for product chains

    def rates(self, t: float) -> np.ndarray:
        return np.asarray(self.rates_fn(t), dtype=float)

    def intensity(self, t: float) -> float:
        lam = float(self.intensity_fn(t))
        if lam < 0.0:
            raise ModelError(f"intensity must be nonnegative, got {lam} at t={t}")
        return lam

    def with_intensity(self, intensity_fn) -> "GeneratorSchedule":
        return GeneratorSchedule(
            rates_fn=self.rates_fn,
            intensity_fn=intensity_fn,
            exit_bound=self.exit_bound,
            label=self.label,
            rate_rows_fn=self.rate_rows_fn,
            components=self.components,
        )


def constant_intensity(value: float) -> Callable[[float], float]:
    return lambda t: value


def tabulated_intensity(times, values) -> Callable[[float], float]:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    return lambda t: float(np.interp(t, times, values))


def metropolis(
    family: EvolvingFamily,
    proposal: ProposalSchedule,
    intensity: Callable[[float], float] | float = 1.0,
) -> GeneratorSchedule:
    """L_t(x,y) = K_t(x,y) min(mu_t(y)/mu_t(x), 1) off the diagonal.

    Acceptance ratios are formed in log domain, so heavily tilted measures
    (underflowing tails) still give exact rates in [0, K].
    """
    if np.isscalar(intensity):
        intensity = constant_intensity(float(intensity))

    def rates_fn(t: float) -> np.ndarray:
        k = proposal.matrix(t)
        logw, _ = family.log_weights(t)
        log_ratio = logw[None, :] - logw[:, None]
        accept = np.exp(np.minimum(log_ratio, 0.0))
        rates = k * accept
        np.fill_diagonal(rates, 0.0)
        np.fill_diagonal(rates, -rates.sum(axis=1))
        return rates

    rate_rows_fn = None
    if proposal.constant_matrix is not None:
        k_const = proposal.constant_matrix
        log_base = np.log(family.base)

        def rate_rows_fn(ts, xs):
            ts = np.asarray(ts, dtype=float)
            xs = np.asarray(xs, dtype=int)
            u = family.potential.values_matrix(ts)
            logw = -u + log_base[None, :]
            lw_x = logw[np.arange(xs.size), xs]
            accept = np.exp(np.minimum(logw - lw_x[:, None], 0.0))
            rows = k_const[xs] * accept
            rows[np.arange(xs.size), xs] = 0.0
            return rows

    return GeneratorSchedule(
        rates_fn=rates_fn,
        intensity_fn=intensity,
        exit_bound=1.0,
        label=f"metropolis[{proposal.label}]",
        rate_rows_fn=rate_rows_fn,
    )


def check_detailed_balance(rates: np.ndarray, mu: np.ndarray, tol: float = DB_TOL) -> float:
    """Return the max detailed-balance violation; raise if above tol."""
    flux = mu[:, None] * rates
    dev = float(np.max(np.abs(flux - flux.T)))
    if dev > tol:
        raise ReversibilityError(f"detailed balance violated by {dev:.3e} (tol {tol:.1e})")
    return dev


def dirichlet_form(rates: np.ndarray, mu: np.ndarray, f: np.ndarray) -> float:
    """E(f) = 1/2 sum_{x,y} (f(y)-f(x))^2 L(x,y) mu(x) = -<f, Lf>_mu."""
    rates = np.asarray(rates, dtype=float)
    mu = np.asarray(mu, dtype=float)
    f = np.asarray(f, dtype=float)
    check_detailed_balance(rates, mu)
    diff = f[None, :] - f[:, None]
    return 0.5 * float(np.sum(diff * diff * rates * mu[:, None]))


def dirichlet_matrix(rates: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Symmetric matrix E with f^T E f = dirichlet_form(rates, mu, f)."""
    e = -np.diag(mu) @ np.asarray(rates, dtype=float)
    return 0.5 * (e + e.T)


def carre_du_champ(rates: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Gamma(f)(x) = sum_y L(x,y) (f(y)-f(x))^2 = L(f^2) - 2 f L(f)."""
    rates = np.asarray(rates, dtype=float)
    f = np.asarray(f, dtype=float)
    diff = f[None, :] - f[:, None]
    off = rates - np.diag(np.diag(rates))
    return np.sum(off * diff * diff, axis=1)


def product_chain(
    components: Sequence[tuple[EvolvingFamily, GeneratorSchedule]],
    size_cap: int = 100_000,
) -> tuple[EvolvingFamily, GeneratorSchedule]:
    """Product family and single-coordinate-move generator.

    The component intensity schedules must agree (the product dynamics uses
    one lambda_t); this is sample-checked. A single component is returned
    unchanged.
    """
    if len(components) == 1:
        return components[0]
    sizes = [fam.n for fam, _ in components]
    n = int(np.prod(sizes))
    if n > size_cap:
        raise SizeError(f"product space has {n} states, above the cap {size_cap}")

    families = [fam for fam, _ in components]
    gens = [g for _, g in components]
    horizon = min(f.horizon for f in families)
    for t in np.linspace(0.0, horizon, 5):
        lams = [g.intensity(float(t)) for g in gens]
        if max(lams) - min(lams) > 1e-10 * max(1.0, max(lams)):
            raise ModelError("product components must share one intensity schedule")

    # index_maps[c][j] = component-c index of product state j (row-major)
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    index_maps = tuple(g.reshape(-1) for g in grids)
    labels = tuple(
        tuple(families[c].space.labels[index_maps[c][j]] for c in range(len(sizes)))
        for j in range(n)
    )
    space = StateSpace(labels=labels)

    base = families[0].base
    for fam in families[1:]:
        base = np.kron(base, fam.base)
    pot = ProductPotential(
        components=tuple(f.potential for f in families),
        index_maps=index_maps,
    )
    family = EvolvingFamily(space=space, base=base, potential=pot, horizon=horizon)

    def rates_fn(t: float) -> np.ndarray:
        out = np.zeros((n, n))
        eyes = [np.eye(s) for s in sizes]
        for c, g in enumerate(gens):
            factors = [eyes[i] if i != c else g.rates(t) for i in range(len(sizes))]
            term = factors[0]
            for fac in factors[1:]:
                term = np.kron(term, fac)
            out += term
        return out

    exit_bound = None
    if all(g.exit_bound is not None for g in gens):
        exit_bound = float(sum(g.exit_bound for g in gens))
    gen = GeneratorSchedule(
        rates_fn=rates_fn,
        intensity_fn=gens[0].intensity_fn,
        exit_bound=exit_bound,
        label="product[" + ",".join(g.label for g in gens) + "]",
        components=tuple(components),
    )
    return family, gen
