import numpy as np
import pytest

from relspec.pivot import simulate_pivot

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def pivot():
    return simulate_pivot(nu_n=20, n_paths=100_000, n_steps=10_000, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
