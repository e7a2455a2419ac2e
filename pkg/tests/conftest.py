import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chiralquench.model import ModelParams

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def params():
    return ModelParams(m_z=1.4, t_0=1.0, t_so=0.2)


@pytest.fixture
def params_charge():
    return ModelParams(m_z=1.4, t_0=1.0, t_so=1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
