import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Numeric property tests routinely outlive the default deadline on slow
# CI boxes; correctness here never depends on wall-clock time.
settings.register_profile(
    "numeric",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("numeric")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
