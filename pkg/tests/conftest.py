import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dist(rng, d):
    v = rng.gamma(1.0, 1.0, size=d)
    while v.sum() == 0:
        v = rng.gamma(1.0, 1.0, size=d)
    return v / v.sum()
