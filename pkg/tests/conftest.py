import numpy as np
import pytest

from fraccal.fracop import assemble
from fraccal.grid import build_grid
from fraccal.solver import build_lift


@pytest.fixture(scope="session")
def grid64():
    return build_grid(0.0, 1.0, 0.5, 64)


@pytest.fixture(scope="session")
def lift64(grid64):
    return build_lift(assemble(grid64, 0.5))


@pytest.fixture(scope="session")
def small_lift():
    # coarse grid for property tests that loop many times
    return build_lift(assemble(build_grid(0.0, 1.0, 0.5, 32), 0.4))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
