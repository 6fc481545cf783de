import math

import pytest

from relay_harvest.model import single_relay_scenario

from helpers import certified_suite


@pytest.fixture
def symmetric():
    return single_relay_scenario([2.0], [1.0], [1.0], 1.0, 1.0)


@pytest.fixture
def symmetric_half_buffer():
    return single_relay_scenario([2.0], [1.0], [1.0], 1.0, 1.0, math.log(2) / 2)


@pytest.fixture(scope="session")
def certified_small():
    """A few dozen certified solutions shared by the cheaper suites."""
    return certified_suite(7, 40)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
