import numpy as np
import pytest

from krigeforest import from_arrays

# one line per acceptance criterion, printed after the run summary so the
# measurements survive pytest's output capture
acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(acceptance_lines):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n=30, p=2, extent=10.0, noise=0.5, beta=None, names=None):
    """Small synthetic dataset with a linear signal plus iid noise."""
    coords = rng.uniform(0.0, extent, size=(n, 2))
    x = rng.uniform(0.0, 1.0, size=(n, p))
    if beta is None:
        beta = np.arange(1, p + 1, dtype=float)
    y = 1.0 + x @ beta + noise * rng.standard_normal(n)
    return from_arrays(coords, y, x, names=names)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng)
