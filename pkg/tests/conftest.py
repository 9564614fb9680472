import numpy as np
import pytest

from mildsde.operators import DiagonalGenerator, DenseGenerator


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def heat_like():
    """Diagonal generator with the classic -k^2 spectrum, K = 64."""
    k = np.arange(1, 65)
    return DiagonalGenerator(-(k.astype(float) ** 2))


@pytest.fixture
def nilpotent2():
    return DenseGenerator(np.array([[0.0, 1.0], [0.0, 0.0]]), growth_bound=0.0)
