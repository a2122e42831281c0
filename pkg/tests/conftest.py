import numpy as np
import pytest

from resgcnn.model import Architecture

# a narrow network with the full 4x4 layout, for tests that only need the wiring
SMALL_ARCH = Architecture(16, ((24, 2), (32, 3), (24, 3), (16, 2)), 4, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_adjacency(rng, n, p=0.5):
    a = (rng.random((n, n)) < p).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    np.fill_diagonal(a, 1.0)
    return a


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
