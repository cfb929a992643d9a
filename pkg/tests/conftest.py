import numpy as np
import pytest

from invlab.experiments import gaussian
from invlab.grid import Grid
from invlab.norms import apply_cutoff


@pytest.fixture
def grid8():
    return Grid(3, 8, 1.0)


@pytest.fixture
def grid12():
    return Grid(3, 12, 1.0)


def bump(grid, center, width, amplitude, margin=None):
    margin = grid.L / 8 if margin is None else margin
    return apply_cutoff(gaussian(grid, center, width, amplitude), grid, margin)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
