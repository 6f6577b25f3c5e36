import math

import numpy as np
import pytest
from hypothesis import settings

from hypershadow.dynamics import CatMap, evolve
from hypershadow.inverse import splitting_inverse
from hypershadow.operator import assemble_gamma
from hypershadow.seqspace import INFINITY
from hypershadow.splitting import compute_splitting

settings.register_profile("thorough", max_examples=1000, deadline=None, derandomize=True)
settings.register_profile("quick", max_examples=50, deadline=None, derandomize=True)

GOLDEN = (1 + math.sqrt(5)) / 2
LAMBDA_U = GOLDEN ** 2
LAMBDA_S = 1 / LAMBDA_U
X0 = np.array([0.1234, 0.5678])


@pytest.fixture(scope="session")
def cat():
    return CatMap()


@pytest.fixture(scope="session")
def cat_window(cat):
    """Cat-map orbit on [-32, 32] with its splitting, Gamma and grade-inf inverse."""
    orbit = evolve(cat, X0, -32, 32)
    frames = compute_splitting(cat, orbit)
    gamma = assemble_gamma(cat, orbit)
    inv = splitting_inverse(gamma, frames, INFINITY)
    return orbit, frames, gamma, inv
