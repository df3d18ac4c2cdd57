import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_tree_edges(rng, m):
    """Uniform-ish random labeled tree as sorted (u, v) pairs."""
    return np.array(
        [(int(rng.integers(0, v)), v) for v in range(1, m)], dtype=np.int64
    ).reshape(-1, 2)
