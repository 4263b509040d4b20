import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from abfrkan.volume import PhantomSpec, make_phantom

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def phantom():
    """Default-geometry class-0 phantom: (volume, mask, label)."""
    return make_phantom(PhantomSpec(seed=0, T=60))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
