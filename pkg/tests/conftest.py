import numpy as np
import pytest

from marketstates.ingest import ReturnMatrix

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_returns(rng, K, T_tot, scale=0.01):
    values = scale * rng.standard_normal((K, T_tot))
    return ReturnMatrix(values=values, tickers=[f"T{i}" for i in range(K)],
                        dates=[f"d{t:05d}" for t in range(T_tot)])


def centered_panel(rng, K, T):
    x = rng.standard_normal((K, T)) * rng.uniform(0.5, 3.0, size=(K, 1))
    return x - x.mean(axis=1, keepdims=True)
