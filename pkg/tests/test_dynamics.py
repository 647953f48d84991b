import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqmc import dynamics, model
from seqmc.errors import ModelError, ReversibilityError, SizeError


def test_metropolis_two_state_rates(two_state_tilt, two_state_generator):
    rates = two_state_generator.rates(np.log(2.0))
    assert rates[0, 1] == pytest.approx(0.25, abs=1e-15)
    assert rates[1, 0] == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(rates.sum(axis=1), 0.0, atol=1e-15)


def test_metropolis_uniform_target_keeps_proposal():
    fam = model.flat_family(4)
    k = dynamics.complete_proposal(4).matrix(0.0)
    gen = dynamics.metropolis(fam, dynamics.complete_proposal(4))
    rates = gen.rates(0.3)
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(rates[off], k[off], atol=1e-15)


def test_metropolis_detailed_balance_random_times(gauss10, gauss10_generator):
    rng = np.random.default_rng(0)
    for t in rng.uniform(0.0, 1.0, size=100):
        rates = gauss10_generator.rates(float(t))
        mu = model.measure_at(gauss10, float(t)).weights
        dev = dynamics.check_detailed_balance(rates, mu)
        assert dev <= 1e-10


def test_stationarity_of_adjoint(gauss10, gauss10_generator):
    for t in (0.0, 0.4, 1.0):
        rates = gauss10_generator.rates(t)
        mu = model.measure_at(gauss10, t).weights
        assert np.max(np.abs(mu @ rates)) < 1e-10


def test_nearest_neighbor_example_rates(gauss5):
    gen = dynamics.metropolis(gauss5, dynamics.nearest_neighbor_proposal(gauss5.space))
    t = 0.2
    rates = gen.rates(t)
    mu = model.measure_at(gauss5, t).weights
    for x in range(5):
        for y in range(5):
            if abs(x - y) == 1:
                assert rates[x, y] == pytest.approx(0.5 * min(mu[y] / mu[x], 1.0), rel=1e-12)
            elif x != y:
                assert rates[x, y] == 0.0


def test_dirichlet_form_two_state(two_state_tilt, two_state_generator):
    t = np.log(2.0)
    rates = two_state_generator.rates(t)
    mu = model.measure_at(two_state_tilt, t).weights
    assert dynamics.dirichlet_form(rates, mu, np.array([1.0, -2.0])) == pytest.approx(1.5, abs=1e-14)


def test_dirichlet_form_constant_vanishes(gauss10, gauss10_generator):
    rates = gauss10_generator.rates(0.5)
    mu = model.measure_at(gauss10, 0.5).weights
    assert dynamics.dirichlet_form(rates, mu, np.full(10, 3.7)) == pytest.approx(0.0, abs=1e-14)


def test_dirichlet_form_rejects_irreversible():
    rates = np.array([[-1.0, 1.0], [0.25, -0.25]])
    with pytest.raises(ReversibilityError):
        dynamics.dirichlet_form(rates, np.array([0.5, 0.5]), np.array([1.0, 0.0]))


# immutable module-level instances for the hypothesis property tests
_GAUSS10 = model.moving_gaussian_family(
    0, 10, model.ScalarSchedule(4.5, 1.0), model.ScalarSchedule(2.0), horizon=1.0
)
_GAUSS10_GEN = dynamics.metropolis(_GAUSS10, dynamics.nearest_neighbor_proposal(_GAUSS10.space))
_GAUSS5 = model.moving_gaussian_family(
    0, 5, model.ScalarSchedule(2.0, 0.4), model.ScalarSchedule(1.5), horizon=1.0
)
_GAUSS5_GEN = dynamics.metropolis(_GAUSS5, dynamics.nearest_neighbor_proposal(_GAUSS5.space))


@settings(max_examples=30, deadline=None)
@given(f=st.lists(st.floats(-5, 5), min_size=10, max_size=10), t=st.floats(0, 1))
def test_dirichlet_double_sum_equals_inner_product(f, t):
    f = np.asarray(f)
    rates = _GAUSS10_GEN.rates(t)
    mu = model.measure_at(_GAUSS10, t).weights
    double_sum = dynamics.dirichlet_form(rates, mu, f)
    inner = -float(f @ (rates @ f * mu))
    assert double_sum == pytest.approx(inner, abs=1e-10)


def test_carre_du_champ_two_state(two_state_generator):
    rates = two_state_generator.rates(np.log(2.0))
    gamma = dynamics.carre_du_champ(rates, np.array([0.0, 1.0]))
    np.testing.assert_allclose(gamma, [0.25, 0.5], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(f=st.lists(st.floats(-5, 5), min_size=5, max_size=5), t=st.floats(0, 1))
def test_carre_du_champ_operator_identity(f, t):
    f = np.asarray(f)
    rates = _GAUSS5_GEN.rates(t)
    gamma = dynamics.carre_du_champ(rates, f)
    identity = rates @ (f * f) - 2.0 * f * (rates @ f)
    np.testing.assert_allclose(gamma, identity, atol=1e-10)


def test_carre_du_champ_constant_zero(gauss5_generator):
    gamma = dynamics.carre_du_champ(gauss5_generator.rates(0.1), np.full(5, 2.2))
    np.testing.assert_allclose(gamma, 0.0, atol=1e-15)


class TestProduct:
    def comps(self, k=2, n=3):
        fam = model.tilt_family(np.linspace(0.0, 1.0, n), horizon=1.0)
        gen = dynamics.metropolis(fam, dynamics.complete_proposal(n))
        return [(fam, gen)] * k

    def test_single_component_passthrough(self):
        (fam, gen) = self.comps(1)[0]
        fam2, gen2 = dynamics.product_chain([(fam, gen)])
        assert fam2 is fam and gen2 is gen

    def test_product_detailed_balance(self):
        pfam, pgen = dynamics.product_chain(self.comps())
        for t in (0.0, 0.5, 1.0):
            mu = model.measure_at(pfam, t).weights
            assert dynamics.check_detailed_balance(pgen.rates(t), mu) <= 1e-10

    def test_product_rate_is_sum_of_components(self):
        pfam, _ = dynamics.product_chain(self.comps())
        (fam, _) = self.comps()[0]
        h_c = model.centered_rate(fam, 0.3)
        h_p = model.centered_rate(pfam, 0.3)
        maps = pfam.potential.index_maps
        np.testing.assert_allclose(h_p, h_c[maps[0]] + h_c[maps[1]], atol=1e-10)

    def test_product_oscillation_additive(self):
        pfam, _ = dynamics.product_chain(self.comps(3))
        (fam, _) = self.comps()[0]
        om_c = model.oscillation_table(fam, 1.0, 65).sup
        om_p = model.oscillation_table(pfam, 1.0, 65).sup
        assert om_p <= 3 * om_c + 1e-9

    def test_single_coordinate_dirichlet_decomposition(self):
        comps = self.comps()
        pfam, pgen = dynamics.product_chain(comps)
        fam, gen = comps[0]
        t = 0.4
        g = np.array([0.3, -1.2, 2.0])
        f = g[np.asarray(pfam.potential.index_maps[0])]  # depends on coordinate 0 only
        e_prod = dynamics.dirichlet_form(pgen.rates(t), model.measure_at(pfam, t).weights, f)
        e_comp = dynamics.dirichlet_form(gen.rates(t), model.measure_at(fam, t).weights, g)
        assert e_prod == pytest.approx(e_comp, abs=1e-10)

    def test_size_cap(self):
        with pytest.raises(SizeError):
            dynamics.product_chain(self.comps(3, n=50), size_cap=1000)

    def test_mismatched_intensities_rejected(self):
        fam = model.tilt_family(np.array([0.0, 1.0]), horizon=1.0)
        prop = dynamics.complete_proposal(2)
        g1 = dynamics.metropolis(fam, prop, 1.0)
        g2 = dynamics.metropolis(fam, prop, 2.0)
        with pytest.raises(ModelError):
            dynamics.product_chain([(fam, g1), (fam, g2)])


def test_proposal_validation():
    with pytest.raises(ModelError):
        dynamics.constant_proposal(np.array([[0.5, 0.5], [0.4, 0.6]]))  # asymmetric
    with pytest.raises(ModelError):
        dynamics.constant_proposal(np.array([[0.5, 0.4], [0.4, 0.5]]))  # rows not 1
