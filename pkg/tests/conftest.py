import numpy as np
import pytest

from atta_lab.streams import gen_benchmark, pretrain_source


@pytest.fixture(scope="session")
def benchmark():
    return gen_benchmark()


@pytest.fixture(scope="session")
def phi(benchmark):
    return pretrain_source(benchmark)


@pytest.fixture()
def gen():
    return np.random.default_rng(0)
