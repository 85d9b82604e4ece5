import numpy as np
import pytest

from sanpool import tensor as T


def scalarize(y, seed=0):
    """Contract a tensor with fixed random weights so every entry matters."""
    flat = T.reshape(y, (1, y.size))
    w = np.random.default_rng(seed).standard_normal((y.size, 1))
    return T.reshape(T.matmul(flat, T.Tensor(w)), ())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
