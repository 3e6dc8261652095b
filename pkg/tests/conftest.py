import numpy as np
import pytest

from bgmm.dgp import DgpConfig, generate_dataset


@pytest.fixture(scope="session")
def draw_k50_seed7():
    return generate_dataset(DgpConfig(n_instruments=50, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
