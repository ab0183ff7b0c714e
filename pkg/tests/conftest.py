import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from factorlab.observation import IncompleteMatrix

settings.register_profile("lab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")

ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(rng, d, density=0.6):
    """Random nonzero values on a random mask with at least one observation."""
    while True:
        mask = rng.random((d, d)) < density
        if mask.any():
            break
    vals = rng.standard_normal((d, d))
    vals[np.abs(vals) < 1e-3] = 1.0
    return IncompleteMatrix(vals, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
