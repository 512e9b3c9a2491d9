import numpy as np
import pytest

from jkoflow.geometry import Density, Grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density(rng, n, lo=0.2, hi=2.0, a=0.0, b=1.0) -> Density:
    return Density(Grid(a, b, n), rng.uniform(lo, hi, n)).normalized()
