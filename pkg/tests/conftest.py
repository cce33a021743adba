import numpy as np
import pytest

from nvfret.grid import IrfSpec, TimeGrid
from nvfret.model import ModelParams


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def irf():
    return IrfSpec()


@pytest.fixture
def coarse_grid():
    """64 ps bins over 65 ns: enough for a 12 ns decay, 4x cheaper than the default."""
    return TimeGrid(64.0, 1024, 64 * 64.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, printed after the run so they survive output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
