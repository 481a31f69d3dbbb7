import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regime_mv import benchmarks
from regime_mv.riccati_constrained import solve_constrained
from regime_mv.riccati_unconstrained import solve

settings.register_profile("suite", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def scalar():
    return benchmarks.scalar_model()


@pytest.fixture(scope="session")
def scalar_r0():
    return benchmarks.scalar_model(rate=0.0)


@pytest.fixture(scope="session")
def shock():
    return benchmarks.shock_model()


@pytest.fixture(scope="session")
def shock_unconstrained(shock):
    return solve(shock)


@pytest.fixture(scope="session")
def shock_constrained(shock):
    return solve_constrained(shock)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
