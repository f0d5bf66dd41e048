import numpy as np
import pytest

from cvcollect.sim import FreewayConfig, simulate_physics


@pytest.fixture(scope="session")
def freeway():
    return FreewayConfig()


@pytest.fixture(scope="session")
def truth_incident(freeway):
    return simulate_physics(freeway, 1)


@pytest.fixture(scope="session")
def truth_free():
    return simulate_physics(FreewayConfig(incident=False), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, filled in by test_acceptance.py and echoed after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
