import numpy as np
import pytest


def random_spd(rng: np.random.Generator, n: int, floor: float = 0.5) -> np.ndarray:
    factor = rng.normal(size=(n, n))
    return factor @ factor.T / n + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
