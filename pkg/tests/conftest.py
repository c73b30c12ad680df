import math

import numpy as np
import pytest

from vecjoin import VectorStore


def scalar_distance(a, b) -> float:
    """Plain Python loop distance, independent of the numpy kernels."""
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_store(rng):
    def make(n, dim, scale=1.0):
        return VectorStore(rng.normal(size=(n, dim)) * scale)
    return make


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
