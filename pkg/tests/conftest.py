import numpy as np
import pytest

from triwell.material import MaterialParams, build_psi_polynomial, energy_model
from triwell.splines import make_uniform_space


@pytest.fixture(scope="session")
def params():
    return MaterialParams()


@pytest.fixture(scope="session")
def model(params):
    return energy_model(params)


@pytest.fixture(scope="session")
def psi_poly(params):
    return build_psi_polynomial(params)


@pytest.fixture(scope="session")
def space4():
    return make_uniform_space(4)


@pytest.fixture(scope="session")
def space3():
    return make_uniform_space(3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_states(rng, n, f_range=0.3, g_range=0.3):
    """Synthetic states: F near the identity, gradients bounded."""
    zeta = np.empty((n, 36))
    zeta[:, :9] = np.eye(3).ravel() + rng.uniform(-f_range, f_range, (n, 9))
    zeta[:, 9:] = rng.uniform(-g_range, g_range, (n, 27))
    return zeta
