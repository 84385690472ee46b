"""
Shared pytest configuration
"""

import numpy as np
import pytest

from src import tensor
from src.forward_model import make_scene, simulate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run training-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def float64_mode():
    tensor.set_default_dtype("float64")
    tensor.set_strict_math(False)
    yield
    tensor.set_default_dtype("float64")
    tensor.set_strict_math(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_sample():
    cube = make_scene("moving-square", 8, 8, 4, seed=3)
    return simulate(cube, "bernoulli-half", mask_seed=5, noise_sigma=0.0, noise_seed=0, scene="0000")
