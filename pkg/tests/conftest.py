import numpy as np
import pytest

from anovatrees.dataset import DataMatrix, prepare
from anovatrees.tree import build_tree

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criteria verdicts after the run, since regular
    test output captures the in-test prints."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_data(x, y=None, names=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if y is None:
        y = np.zeros(x.shape[0])
    if names is None:
        names = tuple(f"c{j}" for j in range(x.shape[1]))
    return DataMatrix(x=x, y=np.asarray(y, dtype=np.float64), column_names=names)


def random_problem(rng, n, p):
    """Random dataset (with duplicate values mixed in) plus its grid and
    marginals."""
    x = rng.random((n, p))
    # duplicate a slice of rows in one column so tie handling is exercised
    if n >= 4:
        j = int(rng.integers(p))
        x[: n // 4, j] = x[n // 4: 2 * (n // 4), j]
    data = make_data(x, y=rng.standard_normal(n))
    grid, marg = prepare(data)
    return data, grid, marg


def random_tree(rng, grid, marg, max_order=4, beta=None):
    """Random identifiable tree over splittable columns."""
    splittable = grid.splittable()
    d = int(rng.integers(1, min(max_order, splittable.size) + 1))
    S = np.sort(rng.choice(splittable, size=d, replace=False))
    s = [float(grid.values[j][rng.integers(grid.size(int(j)))]) for j in S]
    if beta is None:
        beta = float(rng.standard_normal())
    return build_tree([int(j) for j in S], s, beta, marg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
