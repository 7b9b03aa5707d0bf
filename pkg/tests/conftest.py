"""
Shared fixtures: small grids and config trees that keep the suite desk-scale.
"""

import numpy as np
import pytest

from app.lab.fields import Grid


@pytest.fixture
def grid_1d() -> Grid:
    return Grid(1, 1.0 / 32.0, 4.0)


@pytest.fixture
def coarse_grid() -> Grid:
    return Grid(1, 1.0 / 16.0, 4.0)


@pytest.fixture
def grid_2d() -> Grid:
    return Grid(2, 0.25, 4.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def solve_config() -> dict:
    return {
        "experiment": "solve",
        "grid": {"n": 1, "h": 0.0625, "R_grid": 4.0},
        "operator": {"kind": "linear", "sigma": 1.0, "Lambda": 1.0},
        "params": {
            "problem": {
                "g": {"kind": "sine", "amplitude": 1.0, "frequency": 1.0},
                "t0": -1.0,
                "t1": -0.75,
            }
        },
    }
