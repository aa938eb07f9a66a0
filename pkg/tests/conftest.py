from __future__ import annotations

import numpy as np
import pytest

from hall_steady.grid import Grid


@pytest.fixture(scope="session")
def grid8():
    return Grid(8)


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one ``(criterion, passed, detail)`` line for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
