"""Pytest configuration file with common fixtures."""

import numpy as np
import pytest

from src.models.lattice import IsingSpec
from src.models.tensor_train import TensorTrain
from src.utils.database import setup_database


@pytest.fixture
def benchmark_spec():
    """Benchmark chain J=1, g=-1.05, h=0.5 at N=8."""
    return IsingSpec(N=8)


@pytest.fixture
def small_spec():
    return IsingSpec(N=4)


@pytest.fixture
def six_site_spec():
    return IsingSpec(N=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_state(rng):
    """Factory for random normalised MPS of a given size and bond dimension."""

    def make(num_sites, bond=2):
        tensors = []
        for site in range(num_sites):
            left = 1 if site == 0 else bond
            right = 1 if site == num_sites - 1 else bond
            tensors.append(rng.normal(size=(left, 2, right)) + 1j * rng.normal(size=(left, 2, right)))
        state = TensorTrain(tuple(tensors))
        dense = state.to_dense()
        return state.scaled(-float(np.log(np.linalg.norm(dense))))

    return make


@pytest.fixture
def test_db(tmp_path):
    """Setup a throwaway result store."""
    path = str(tmp_path / "test_results.db")
    setup_database(path)
    return path


@pytest.fixture
def cache_dir(tmp_path):
    path = tmp_path / "cache"
    path.mkdir()
    return str(path)
