import math

import numpy as np
import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    """Print (and keep for the terminal summary) one PASS/FAIL line per criterion."""

    def record(number, title, passed, detail=""):
        line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def fluxes():
    # (b_corner, b_star) = (2pi/3, 2pi/5)
    return 2 * math.pi / 3, 2 * math.pi / 5
