import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from circlaw import dyson

settings.register_profile(
    "default",
    max_examples=20,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def seeded_flat_profile(n: int, seed: int = 0, spread: float = 0.5) -> dyson.VarianceProfile:
    """Random non-symmetric flat profile with entries in [(1-spread), (1+spread)]/n."""
    rng = np.random.default_rng(seed)
    s = (1.0 + spread * (2.0 * rng.random((n, n)) - 1.0)) / n
    return dyson.normalize(dyson.variance_profile(s))


@pytest.fixture(scope="session")
def flat_profile_24():
    return seeded_flat_profile(24, seed=7)


@pytest.fixture(scope="session")
def flat_profile_40():
    return seeded_flat_profile(40, seed=11)


@pytest.fixture(scope="session")
def two_block_20():
    return dyson.normalize(dyson.two_block_profile(20, 1.0, 4.0, 0.3))


@pytest.fixture(scope="session")
def constant_16():
    return dyson.constant_profile(16)
