import sys

import numpy as np
import pytest

from nestsr import tensor as T


@pytest.fixture(autouse=True)
def _debug_finite():
    T.set_debug(True)
    yield
    T.set_debug(False)


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
