import numpy as np
import pytest

from seqmc import dynamics, funcineq as fi, model
from seqmc.errors import CertificationError, DisconnectedChainError, ModelError


@pytest.fixture
def two_state_pair():
    L = np.array([[-0.25, 0.25], [0.5, -0.5]])
    mu = np.array([2 / 3, 1 / 3])
    return L, mu


class TestPoincare:
    def test_two_state_exact(self, two_state_pair):
        L, mu = two_state_pair
        assert fi.poincare_constant(L, mu) == pytest.approx(4 / 3, abs=1e-12)

    def test_complete_graph_uniform(self):
        n = 6
        fam = model.flat_family(n)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(n))
        val = fi.poincare_constant(gen.rates(0.0), fam.base)
        # complete-graph chain relaxes at rate n/(n-1)
        assert val == pytest.approx((n - 1) / n, abs=1e-10)

    def test_variational_cross_check(self, gauss10, gauss10_generator):
        t = 0.5
        mu = model.measure_at(gauss10, t).weights
        rates = gauss10_generator.rates(t)
        c_poi = fi.poincare_constant(rates, mu)
        rng = np.random.default_rng(2)
        for _ in range(100):
            f = rng.standard_normal(10)
            f = f - float(f @ mu)
            ratio = float((f * f) @ mu) / dynamics.dirichlet_form(rates, mu, f)
            assert ratio <= c_poi + 1e-8

    def test_disconnected_raises(self):
        fam = model.two_block_family([2, 2], 1.0, horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.nearest_neighbor_proposal(fam.space))
        mu = model.measure_at(fam, 0.3).weights
        with pytest.raises(DisconnectedChainError):
            fi.poincare_constant(gen.rates(0.3), mu)

    def test_product_equals_component(self):
        fam = model.tilt_family(np.array([0.0, 0.6, 1.1]), horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(3))
        pfam, pgen = dynamics.product_chain([(fam, gen), (fam, gen)])
        t = 0.4
        c_comp = fi.poincare_constant(gen.rates(t), model.measure_at(fam, t).weights)
        c_prod = fi.poincare_constant(pgen.rates(t), model.measure_at(pfam, t).weights)
        assert c_prod == pytest.approx(c_comp, abs=1e-8)


class TestRateConstants:
    def test_zero_rate(self, two_state_pair):
        L, mu = two_state_pair
        a, b = fi.rate_constants(L, mu, np.zeros(2))
        assert a == 0.0 and b == pytest.approx(0.0, abs=1e-14)

    def test_two_state_hand_values(self, two_state_pair):
        L, mu = two_state_pair
        a, b = fi.rate_constants(L, mu, np.array([1.0, -2.0]))
        assert a == pytest.approx(4 / 3, abs=1e-12)
        assert b == pytest.approx(8 / 3, abs=1e-12)

    def test_variational_oracle(self, gauss10, gauss10_generator):
        """No random mean-zero direction beats the reported suprema, and the
        analytic maximizer of the dual-norm ratio attains the reported value."""
        t = 0.6
        mu = model.measure_at(gauss10, t).weights
        rates = gauss10_generator.rates(t)
        h = model.centered_rate(gauss10, t)
        a_val, b_val = fi.rate_constants(rates, mu, h)
        rng = np.random.default_rng(5)
        for _ in range(2000):
            f = rng.standard_normal(10)
            f -= float(f @ mu)
            den = dynamics.dirichlet_form(rates, mu, f)
            assert float(-(h * f * f) @ mu) / den <= a_val + 1e-9
            assert float((h * f) @ mu) ** 2 / den <= b_val + 1e-9
        g, *_ = np.linalg.lstsq(-rates, h, rcond=None)
        ratio_at_solution = float((h * g) @ mu) ** 2 / dynamics.dirichlet_form(rates, mu, g)
        assert ratio_at_solution == pytest.approx(b_val, rel=1e-9)

    def test_requires_centered_rate(self, two_state_pair):
        L, mu = two_state_pair
        with pytest.raises(ModelError):
            fi.rate_constants(L, mu, np.array([1.0, 1.0]))

    def test_rough_bounds_vs_poincare(self, gauss10, gauss10_generator):
        """A_t <= osc C_t and B_t <= osc^2 C_t."""
        for t in (0.1, 0.5, 0.9):
            mu = model.measure_at(gauss10, t).weights
            rates = gauss10_generator.rates(t)
            h = model.centered_rate(gauss10, t)
            osc = float(h.max() - h.min())
            c_poi = fi.poincare_constant(rates, mu)
            a_val, b_val = fi.rate_constants(rates, mu, h)
            assert a_val <= osc * c_poi + 1e-9
            assert b_val <= osc * osc * c_poi + 1e-9


class TestLsiAscent:
    def test_lower_below_certified_upper(self, gauss10, gauss10_generator):
        t = 0.5
        mu = model.measure_at(gauss10, t).weights
        logw, _ = gauss10.log_weights(t)
        lo, _ = fi.lsi_lower_estimate(gauss10_generator.rates(t), mu, restarts=48, seed=1)
        up = fi.lsi_upper_for_profile(logw)
        assert 0.0 < lo <= up + 1e-9

    def test_sign_symmetry(self, two_state_pair):
        L, mu = two_state_pair
        lo1, _ = fi.lsi_lower_estimate(L, mu, restarts=16, seed=3)
        lo2, _ = fi.lsi_lower_estimate(L, mu, restarts=16, seed=4)
        assert lo1 == pytest.approx(lo2, rel=1e-6)

    def test_feasible_ratios_below_estimate(self, two_state_pair):
        L, mu = two_state_pair
        lo, _ = fi.lsi_lower_estimate(L, mu, restarts=32, seed=0)
        rng = np.random.default_rng(11)
        e_mat = dynamics.dirichlet_matrix(L, mu)
        best = 0.0
        for _ in range(2000):
            f = rng.standard_normal(2)
            nrm = np.sqrt((f * f) @ mu)
            f = f / nrm
            num = 0.5 * float((f * f * np.log(np.maximum(f * f, 1e-300))) @ mu)
            den = float(f @ (e_mat @ f))
            if den > 1e-12:
                best = max(best, num / den)
        assert best <= lo + 1e-6


class TestHardyTables:
    def test_two_point_uniform_tables(self):
        spec = fi.from_weights(0, np.log([0.5, 0.5]))
        poi = fi.hardy_poincare_tables(spec)
        np.testing.assert_allclose(poi.b_pos, [1.0], atol=1e-14)
        assert poi.b_minus == 0.0  # empty side contributes 0
        assert poi.poincare_bound == pytest.approx(4.0)
        lsi = fi.hardy_lsi_tables(spec)
        np.testing.assert_allclose(lsi.beta_pos, [2 * np.log(2)], atol=1e-12)
        assert lsi.lsi_bound == pytest.approx(40 * np.log(2))

    def test_exact_below_bound_two_point(self):
        spec = fi.from_weights(0, np.log([0.5, 0.5]))
        rates = fi.birth_death_rates(spec)
        exact = fi.poincare_constant(rates, spec.mu)
        assert exact == pytest.approx(1.0, abs=1e-12)
        assert exact <= fi.hardy_poincare_tables(spec).poincare_bound

    def test_symmetric_weights_symmetric_tables(self):
        coords = np.arange(-3, 4)
        spec = fi.from_weights(-3, -0.3 * coords.astype(float) ** 2)
        tab = fi.hardy_poincare_tables(spec)
        assert tab.b_plus == pytest.approx(tab.b_minus, rel=1e-12)
        assert tab.beta_plus == pytest.approx(tab.beta_minus, rel=1e-12)

    def test_random_log_concave_chain(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            width = int(rng.integers(4, 12))
            a = -int(rng.integers(0, width))
            a = max(a, 1 - width)
            coords = np.arange(a, a + width, dtype=float)
            curv = rng.uniform(0.05, 0.8)
            center = rng.uniform(coords[0], coords[-1])
            lw = -curv * (coords - center) ** 2
            spec = fi.from_weights(a, lw)
            rates = fi.birth_death_rates(spec)
            exact = fi.poincare_constant(rates, spec.mu, log_mu=spec.log_weights)
            assert exact <= fi.hardy_poincare_tables(spec).poincare_bound + 1e-9

    def test_requires_zero_in_interval(self):
        with pytest.raises(ModelError):
            fi.BirthDeathSpec(a=2, width=3, log_weights=np.zeros(3))


class TestClosedFormBounds:
    def test_zero_s_kills_first_term(self):
        spec = fi.from_weights(-2, np.array([-4.0, -2.0, 0.0, -2.0, -4.0]), s=0, rho=1.0, alpha=np.exp(-2.0))
        poi, lsi = fi.birth_death_bounds(spec)
        r = spec.r
        assert poi == pytest.approx(4 * r * r)

    def test_condition_violation_reported(self):
        spec = fi.from_weights(-1, np.array([0.0, -1.0, 0.5]), s=0, rho=1.0, alpha=0.5)
        with pytest.raises(CertificationError) as err:
            fi.birth_death_bounds(spec)
        assert err.value.violations

    def test_gauss_parameters(self):
        rep = fi.discrete_gauss(2.0, -5, 10)
        assert rep.spec.s == 2
        assert rep.spec.rho == pytest.approx(np.exp(0.5))
        assert rep.spec.alpha == pytest.approx(np.exp(-5 / 8))
        assert rep.square_width_bound == pytest.approx(120.0)

    def test_gauss_chain_all_inequalities(self):
        for sigma in (0.5, 2.0, 5.0):
            rep = fi.discrete_gauss(sigma, -5, 10)
            assert rep.poincare_exact <= rep.hardy.poincare_bound + 1e-9
            assert rep.hardy.poincare_bound <= rep.thm_poincare + 1e-9
            assert rep.poincare_exact <= rep.square_width_bound + 1e-9
            assert rep.lsi_lower <= rep.hardy.lsi_bound + 1e-9
            assert rep.hardy.lsi_bound <= rep.thm_lsi + 1e-9
            assert rep.hardy.lsi_bound <= rep.lsi_display_bound + 1e-9
            # rough bound via log(1/mu_*) dominates the beta tables as well
            assert rep.hardy.lsi_bound <= rep.hardy.lsi_rough_bound + 1e-9

    def test_extreme_tail_stays_finite(self):
        rep = fi.discrete_gauss(0.5, -25, 50)
        vals = [rep.poincare_exact, rep.hardy.poincare_bound, rep.thm_poincare,
                rep.hardy.lsi_bound, rep.thm_lsi, rep.lsi_display_bound]
        assert all(np.isfinite(v) for v in vals)

    def test_drift_condition_check(self):
        out = fi.moving_gauss_drift_check(mean_rate=0.3, width_rate=0.0, sigma=2.0, delta=10.0)
        assert out["holds"] and out["osc_bound"] <= 1.0 + 1e-12
        out2 = fi.moving_gauss_drift_check(mean_rate=2.0, width_rate=0.0, sigma=2.0, delta=10.0)
        assert not out2["holds"]


class TestConstantsReport:
    def test_flat_family(self):
        fam = model.flat_family(5)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(5))
        rep = fi.constants_report(fam, gen, 0.5, lsi_restarts=16)
        assert rep.rate_weighted == 0.0
        assert rep.rate_dual_norm_sq == pytest.approx(0.0, abs=1e-12)
        assert rep.poincare > 0

    def test_birth_death_certified(self, gauss10, gauss10_generator):
        rep = fi.constants_report(gauss10, gauss10_generator, 0.3, lsi_restarts=16)
        assert rep.certified and rep.lsi_upper is not None
        assert rep.lsi_lower <= rep.lsi_upper + 1e-9

    def test_partitioned_blocks(self):
        fam = model.two_block_family([2, 3], 1.0, horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.nearest_neighbor_proposal(fam.space))
        rep = fi.constants_report(fam, gen, 0.5, lsi_restarts=16)
        assert len(rep.blocks) == 2
        assert rep.certified
        # within-block potential is constant in time here, so blockwise A = B = 0
        assert rep.rate_weighted == pytest.approx(0.0, abs=1e-10)
        assert rep.rate_dual_norm_sq == pytest.approx(0.0, abs=1e-10)

    def test_complete_graph_uncertified(self):
        fam = model.tilt_family(np.array([0.0, 0.5, 1.0]), horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(3))
        rep = fi.constants_report(fam, gen, 0.5, lsi_restarts=16)
        assert not rep.certified and rep.lsi_upper is None

    def test_product_of_chains_certified(self):
        comp = model.moving_gaussian_family(
            0, 4, model.ScalarSchedule(1.5, 0.2), model.ScalarSchedule(1.5), horizon=1.0
        )
        gen_c = dynamics.metropolis(comp, dynamics.nearest_neighbor_proposal(comp.space))
        pfam, pgen = dynamics.product_chain([(comp, gen_c)] * 2)
        rep = fi.constants_report(pfam, pgen, 0.5, lsi_restarts=16)
        rep_c = fi.constants_report(comp, gen_c, 0.5, lsi_restarts=16)
        assert rep.certified
        assert rep.lsi_upper == pytest.approx(rep_c.lsi_upper)
        assert rep.lsi_lower <= rep.lsi_upper + 1e-9
