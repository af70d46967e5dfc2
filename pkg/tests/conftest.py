import numpy as np
import pytest

from gpam.fields import Field, Grid2D, Mollifier, mollify, sample_white_noise, smooth_bump
from gpam.spde_solver import PDEConfig, stable_dt


@pytest.fixture(scope="session")
def grid32():
    return Grid2D(32)


@pytest.fixture(scope="session")
def grid64():
    return Grid2D(64)


@pytest.fixture(scope="session")
def xi32(grid32):
    return mollify(sample_white_noise(7, grid32), Mollifier(0.5))


@pytest.fixture(scope="session")
def xi64(grid64):
    return mollify(sample_white_noise(7, grid64), Mollifier(0.25))


@pytest.fixture(scope="session")
def h32(grid32):
    return Field.from_function(grid32, lambda x1, x2: 0.5 + np.sin(x1) * np.cos(2.0 * x2))


@pytest.fixture(scope="session")
def h64(grid64):
    return Field.from_function(grid64, lambda x1, x2: 0.5 + np.sin(x1) * np.cos(2.0 * x2))


@pytest.fixture(scope="session")
def bump32(grid32):
    return smooth_bump(grid32, (np.pi, np.pi), 0.5, 1.0)


def initial_datum(grid):
    # values in [0.5, 1.5]: g(u0) is far from 0 for sin, cos and rational
    return Field.from_function(grid, lambda x1, x2: 1.0 + 0.5 * np.cos(x1) * np.sin(x2))


@pytest.fixture
def pde32(grid32, xi32):
    return PDEConfig(grid=grid32, epsilon=0.5, dt=min(2e-3, stable_dt(xi32)), t_end=0.1, u0=initial_datum(grid32))


@pytest.fixture
def pde64(grid64, xi64):
    return PDEConfig(grid=grid64, epsilon=0.25, dt=min(1e-3, stable_dt(xi64)), t_end=0.1, u0=initial_datum(grid64))
