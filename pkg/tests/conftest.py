import numpy as np
import pytest

from fnls.domain import Grid
from fnls.groundstate import ProblemSpec, solve_fixed_point, solve_gradient_flow
from fnls.operators import Potential
from fnls.spectral import linearize


@pytest.fixture(scope="session")
def grid():
    return Grid(1, 12.0, 512)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(1, 8.0, 64)


@pytest.fixture(scope="session")
def default_spec(grid):
    return ProblemSpec(1.0, 3.0, 1.0, Potential.power(grid, 2.0))


@pytest.fixture(scope="session")
def default_gs(default_spec):
    return solve_gradient_flow(default_spec)


@pytest.fixture(scope="session")
def default_fp(default_spec):
    return solve_fixed_point(default_spec)


@pytest.fixture(scope="session")
def default_pair(default_gs):
    return linearize(default_gs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
