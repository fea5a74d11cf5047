import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


def random_spd(rng, k):
    A = rng.standard_normal((k, k))
    return A @ A.T + 0.1 * k * np.eye(k)


def random_simplex(rng, k):
    w = rng.random(k) + 1e-3
    return w / w.sum()
