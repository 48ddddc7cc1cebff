import numpy as np
import pytest

from diffavrg.data import generate_least_squares, partition
from diffavrg.objective import LossModel
from diffavrg.topology import build_topology, metropolis_weights


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    """K=5 least-squares problem on a line graph, 8 samples per node."""
    ds = generate_least_squares(40, 4, condition=5.0, noise_std=0.1, seed=3)
    part = partition(ds, 5, seed=3)
    model = LossModel("least-squares")
    A = metropolis_weights(build_topology("line", 5))
    return ds, part, model, A
