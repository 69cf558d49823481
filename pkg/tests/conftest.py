import numpy as np
import pytest

from hodlr3d.kernels import generate_points


@pytest.fixture(scope="session")
def cloud_3000():
    return generate_points("uniform-random", 3000, 7).points


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
