"""Shared fixtures: small grids and stencil tables built once per session."""

import numpy as np
import pytest

from otreflector import sphere_grid, stencil


@pytest.fixture(scope="session")
def grid500():
    return sphere_grid.fibonacci_grid(500)


@pytest.fixture(scope="session")
def grid2000():
    return sphere_grid.fibonacci_grid(2000)


@pytest.fixture(scope="session")
def table500(grid500):
    return stencil.build_stencil_table(grid500)


@pytest.fixture(scope="session")
def table2000(grid2000):
    return stencil.build_stencil_table(grid2000)


@pytest.fixture(scope="session")
def uniform_density(grid2000):
    return np.full(grid2000.n, 1.0 / (4.0 * np.pi))
