import warnings

import pytest
from hypothesis import HealthCheck, settings

from tvobs.timefun import GainClockWarning

settings.register_profile("tvobs", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tvobs")


@pytest.fixture(autouse=True)
def _quiet_gain_clock():
    # the reference clock exp(10t) is knowingly short of the required q
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GainClockWarning)
        yield


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
