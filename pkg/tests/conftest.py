import math

import pytest
from hypothesis import settings

from nudge3d.spectral import GridSpec

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")

ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail=""):
    line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32)


@pytest.fixture(scope="session")
def box_grid():
    """A 16^3 grid on a box that is not 2 pi, to catch missing length factors."""
    return GridSpec(16, 3.0 * math.pi)
