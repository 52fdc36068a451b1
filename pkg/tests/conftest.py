import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def scenes():
    """Benchmark scenes (grid, distance field, MEM), built once per session."""
    from locaware.config import PlanConfig
    from locaware.pipeline import load_scene

    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_scene(PlanConfig(map=name))
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
