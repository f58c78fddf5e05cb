import numpy as np
import pytest

from tornadoverif.geoproj import GRID211, ProjCoord
from tornadoverif.riskfield import RegularGrid


@pytest.fixture
def small_grid():
    """30x30 coarse grid at Grid 211 spacing, centred near the CONUS middle."""
    return RegularGrid(ProjCoord(-1_200_000.0, 300_000.0), 81_270.5, 81_270.5, 30, 30, GRID211)


@pytest.fixture
def rng():
    return np.random.default_rng(20250314)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
