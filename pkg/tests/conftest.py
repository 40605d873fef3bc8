import numpy as np
import pytest
from hypothesis import settings

from fsrgan.numerics import SmoothingParams, make_stream
from fsrgan.target import NetworkShape, construct_generic

settings.register_profile("repo", deadline=None, max_examples=50)
settings.load_profile("repo")

TINY = NetworkShape(L=2, d=16, d_l=(2, 4), m_l=(4, 4), m0=16, m0_prime=16, k_l=(2, 2))


@pytest.fixture(scope="session")
def tiny_shape():
    return TINY


@pytest.fixture(scope="session")
def tiny_target():
    return construct_generic(TINY, (0.1, 0.1), make_stream(0, "tiny"), calib_samples=20_000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def soft():
    return SmoothingParams(zeta=0.2, leak=0.05)
