import time

import pytest
from hypothesis import settings

from pathdob.pd_design import feasible_region
from pathdob.vehicle import nominal_plant_z

# Fixed example sequence; timing varies too much across machines for deadlines.
settings.register_profile("repo", deadline=None, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect a one-line acceptance verdict for the terminal summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def gn_z():
    return nominal_plant_z(0.01)


@pytest.fixture(scope="session")
def region_121(gn_z):
    t0 = time.perf_counter()
    res = feasible_region(gn_z)
    return res, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
