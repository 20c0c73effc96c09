import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairtp import dataio  # noqa: E402
from fairtp.domain import RoadNetwork  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_network():
    # regions of 3, 2 and 1 sensors
    return RoadNetwork(np.array([0, 0, 0, 1, 1, 2]))


@pytest.fixture(scope="session")
def tiny_city():
    """A fast four-region city for harness tests."""
    spec = dataio.SyntheticSpec(region_sizes=[8, 6, 3, 2], steps=400, seed=3)
    return dataio.generate(spec)
