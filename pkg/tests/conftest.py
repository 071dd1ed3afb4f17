import numpy as np
import pytest

from ctcilm.ctc import PosteriorGrid, Vocabulary
from ctcilm.data import World

A, B = 0, 1


@pytest.fixture
def ab():
    return Vocabulary(("a", "b"))


@pytest.fixture
def g2ab():
    # two frames over (a, b, blank)
    return PosteriorGrid.from_probs([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])


@pytest.fixture
def two_grid_world(ab, g2ab):
    return World(ab, [g2ab, g2ab.reversed()], np.array([0.5, 0.5]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
