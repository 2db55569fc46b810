import numpy as np
import pytest

from varinit.core import RandomSource

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return RandomSource(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
