import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from seqmc import model
from seqmc.errors import ConfigError, ModelError


def test_measure_identity_when_potential_vanishes():
    base = np.array([0.2, 0.3, 0.5])
    fam = model.tilt_family(np.zeros(3), base=base, horizon=1.0)
    snap = model.measure_at(fam, 0.7)
    np.testing.assert_allclose(snap.weights, base, atol=1e-15)
    assert snap.log_z == pytest.approx(0.0, abs=1e-15)


def test_two_state_tilt_weights(two_state_tilt):
    snap = model.measure_at(two_state_tilt, np.log(2.0))
    np.testing.assert_allclose(snap.weights, [2 / 3, 1 / 3], atol=1e-14)


def test_moving_gaussian_shape():
    fam = model.moving_gaussian_family(
        0, 9, model.ScalarSchedule(4.0), model.ScalarSchedule(1.5), horizon=1.0
    )
    w = model.measure_at(fam, 0.3).weights
    x = np.arange(9.0)
    expected = np.exp(-((x - 4.0) ** 2) / (2 * 1.5**2))
    expected /= expected.sum()
    np.testing.assert_allclose(w, expected, atol=1e-14)


def test_non_finite_potential_rejected():
    fam = model.EvolvingFamily(
        space=model.StateSpace(labels=(0, 1)),
        base=np.array([0.5, 0.5]),
        potential=model.CallablePotential(
            value_fn=lambda t: np.array([0.0, np.inf if t > 0.5 else 0.0]),
            rate_fn=lambda t: np.zeros(2),
        ),
        horizon=1.0,
        check_rate_consistency=False,
    )
    with pytest.raises(ModelError):
        model.measure_at(fam, 0.9)


def test_rate_consistency_check_fires():
    with pytest.raises(ModelError):
        model.EvolvingFamily(
            space=model.StateSpace(labels=(0, 1)),
            base=np.array([0.5, 0.5]),
            potential=model.CallablePotential(
                value_fn=lambda t: np.array([0.0, t]),
                rate_fn=lambda t: np.array([0.0, 5.0]),  # wrong slope
            ),
            horizon=1.0,
        )


def test_centered_rate_two_state(two_state_tilt):
    np.testing.assert_allclose(model.centered_rate(two_state_tilt, 0.0), [-0.5, 0.5], atol=1e-14)


def test_centered_rate_is_centered(gauss10):
    for t in np.linspace(0.0, 1.0, 7):
        h = model.centered_rate(gauss10, float(t))
        mu = model.measure_at(gauss10, float(t)).weights
        assert abs(h @ mu) < 1e-12


def test_measure_reconstruction_from_rate_quadrature(gauss10):
    """mu_t(x) = exp(-int_0^t H_s(x) ds) mu_at_0(x), per entry."""
    t = 0.8
    mu0 = model.measure_at(gauss10, 0.0).weights
    target = model.measure_at(gauss10, t).weights
    for x in range(gauss10.n):
        integral, _ = integrate.quad(
            lambda s: model.centered_rate(gauss10, s)[x], 0.0, t, epsabs=1e-11, epsrel=1e-10, limit=200
        )
        assert np.exp(-integral) * mu0[x] == pytest.approx(target[x], abs=1e-6)


def test_oscillation_constant_for_tilt(two_state_tilt):
    table = model.oscillation_table(two_state_tilt, 1.0, 128)
    np.testing.assert_allclose(table.osc, 1.0, atol=1e-12)
    assert table.sup == pytest.approx(1.0, abs=1e-12)


def test_oscillation_zero_for_flat():
    fam = model.flat_family(4)
    assert model.oscillation_table(fam, 1.0, 64).sup == 0.0


def test_oscillation_table_requires_two_points(two_state_tilt):
    with pytest.raises(ModelError):
        model.oscillation_table(two_state_tilt, 1.0, 1)


def test_accumulated_change_zero_for_flat():
    fam = model.flat_family(3)
    for q in (1, 2, np.inf):
        assert model.accumulated_change(fam, 1.0, q) == 0.0


def test_accumulated_change_closed_form(two_state_tilt):
    """K_1(inf) against the closed form int_0^1 1/(1+e^-s) ds."""
    val = model.accumulated_change(two_state_tilt, 1.0, np.inf)
    closed = np.log(1.0 + np.e) - np.log(2.0)
    assert val == pytest.approx(closed, rel=1e-8)


def test_accumulated_change_bounded_by_omega_t(gauss10):
    omega = model.oscillation_table(gauss10, 1.0, 512).sup
    for q in (2.0, 4.0, np.inf):
        assert model.accumulated_change(gauss10, 1.0, q) <= omega * 1.0 + 1e-6


def test_accumulated_change_monotone(gauss10):
    ts = [0.2, 0.5, 1.0]
    qs = [1.0, 2.0, 6.0, np.inf]
    vals = {(t, q): model.accumulated_change(gauss10, t, q) for t in ts for q in qs}
    for q in qs:
        assert vals[(0.2, q)] <= vals[(0.5, q)] + 1e-12 <= vals[(1.0, q)] + 2e-12
    for t in ts:
        for qa, qb in zip(qs, qs[1:]):
            assert vals[(t, qa)] <= vals[(t, qb)] + 1e-9  # Jensen


class TestPartition:
    def make(self, shift=1.5):
        return model.two_block_family([2, 3], shift, horizon=1.0)

    def test_single_block_trivial(self):
        space = model.StateSpace(labels=(0, 1, 2), partition=((0, 1, 2),))
        fam = model.EvolvingFamily(
            space=space, base=np.full(3, 1 / 3),
            potential=model.LinearTilt(np.array([0.0, 1.0, 2.0])), horizon=1.0,
        )
        conds = model.block_conditionals(fam, 0.5)
        assert len(conds) == 1
        np.testing.assert_allclose(conds[0].weights, model.measure_at(fam, 0.5).weights)
        np.testing.assert_allclose(conds[0].rate, model.centered_rate(fam, 0.5), atol=1e-14)
        assert model.block_mass_ratio_sup(fam, 1.0, 64) == pytest.approx(1.0)

    def test_flat_blocks(self):
        fam = self.make(shift=0.0)
        for c in model.block_conditionals(fam, 0.4):
            assert c.block_rate == pytest.approx(0.0, abs=1e-14)
        assert model.block_mass_ratio_sup(fam, 1.0, 64) == pytest.approx(1.0)

    def test_block_rate_matches_mass_derivative(self):
        """h_t(i) = -d/dt log mu_t(S_i), by central finite difference."""
        fam = self.make()
        t, eps = 0.6, 1e-6
        conds = model.block_conditionals(fam, t)
        for i, block in enumerate(fam.space.partition):
            idx = np.asarray(block)
            m_plus = model.measure_at(fam, t + eps).weights[idx].sum()
            m_minus = model.measure_at(fam, t - eps).weights[idx].sum()
            fd = -(np.log(m_plus) - np.log(m_minus)) / (2 * eps)
            assert conds[i].block_rate == pytest.approx(fd, abs=1e-6)

    def test_block_rates_average_to_zero(self):
        fam = self.make()
        conds = model.block_conditionals(fam, 0.7)
        total = sum(c.mass * c.block_rate for c in conds)
        assert abs(total) < 1e-10

    def test_conditional_rates_centered(self):
        fam = self.make()
        for c in model.block_conditionals(fam, 0.3):
            assert abs(c.rate @ c.weights) < 1e-12

    def test_partition_required(self, gauss10):
        with pytest.raises(ConfigError):
            model.block_conditionals(gauss10, 0.5)


def test_tabulated_potential_interpolates():
    times = np.array([0.0, 0.5, 1.0])
    table = np.array([[0.0, 0.0], [0.0, 0.5], [0.0, 2.0]])
    pot = model.TabulatedPotential(times=times, table=table)
    np.testing.assert_allclose(pot.values(0.25), [0.0, 0.25])
    np.testing.assert_allclose(pot.rates(0.25), [0.0, 1.0])
    np.testing.assert_allclose(pot.rates(0.75), [0.0, 3.0])


def test_state_space_validation():
    with pytest.raises(ModelError):
        model.StateSpace(labels=(0, 0))
    with pytest.raises(ModelError):
        model.StateSpace(labels=(0, 1), embedding=(3, 3))
    with pytest.raises(ModelError):
        model.StateSpace(labels=(0, 1, 2), partition=((0, 1), (1, 2)))


@settings(max_examples=25, deadline=None)
@given(
    direction=st.lists(st.floats(-3, 3), min_size=2, max_size=6),
    t=st.floats(0.0, 1.0),
)
def test_centering_holds_for_random_tilts(direction, t):
    fam = model.tilt_family(np.asarray(direction), horizon=1.0)
    h = model.centered_rate(fam, t)
    mu = model.measure_at(fam, t).weights
    assert abs(h @ mu) < 1e-12
    assert abs(mu.sum() - 1.0) < 1e-12
