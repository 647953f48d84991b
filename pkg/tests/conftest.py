import numpy as np
import pytest

from seqmc import dynamics, model


@pytest.fixture
def two_state_tilt():
    """S = {0, 1}, uniform base, U_t(x) = t*x."""
    return model.tilt_family(np.array([0.0, 1.0]), horizon=2.0)


@pytest.fixture
def two_state_generator(two_state_tilt):
    prop = dynamics.constant_proposal(np.full((2, 2), 0.5))
    return dynamics.metropolis(two_state_tilt, prop)


@pytest.fixture
def gauss10():
    """10-state moving Gaussian, admissible drift."""
    return model.moving_gaussian_family(
        0, 10, model.ScalarSchedule(4.5, 1.0), model.ScalarSchedule(2.0), horizon=1.0
    )


@pytest.fixture
def gauss10_generator(gauss10):
    return dynamics.metropolis(gauss10, dynamics.nearest_neighbor_proposal(gauss10.space))


@pytest.fixture
def gauss5():
    return model.moving_gaussian_family(
        0, 5, model.ScalarSchedule(2.0, 0.4), model.ScalarSchedule(1.5), horizon=1.0
    )


@pytest.fixture
def gauss5_generator(gauss5):
    return dynamics.metropolis(gauss5, dynamics.nearest_neighbor_proposal(gauss5.space))
