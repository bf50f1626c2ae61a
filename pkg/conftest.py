import numpy as np
import pytest
from hypothesis import settings

from data.sample_data import scenario_params, texture_params
from logic.sampler import sample_mggd

settings.register_profile("repro", derandomize=True, max_examples=100, deadline=None)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def toeplitz_scenario():
    """p=3, beta=0.2, rho=0.8, m=1: the convergence study scenario."""
    return scenario_params(3, 0.2, 1.0, rho=0.8)


@pytest.fixture
def toeplitz_data(toeplitz_scenario):
    return sample_mggd(toeplitz_scenario, 200, 0)


@pytest.fixture(params=["bark", "leaves"])
def texture(request):
    return texture_params(request.param)
