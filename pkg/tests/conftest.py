import itertools

import numpy as np
import pytest

from fomvi.instances import GarnetParams, gen_garnet
from fomvi.model import RobustMdpInstance

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_instance(S=3, A=2, kind="ellipsoidal", radius=0.1, discount=0.8, seed=0, costs=None):
    r = np.random.default_rng(seed)
    c = r.uniform(0, 10, size=(S, A)) if costs is None else np.asarray(costs, dtype=float)
    P = r.dirichlet(np.ones(S), size=(S, A))
    return RobustMdpInstance(c, P, discount, np.full(S, 1.0 / S), kind, radius)


@pytest.fixture
def garnet5():
    return gen_garnet(GarnetParams(5, 5, seed=0))


def kkt_simplex_projection(z):
    """Enumerate active sets of the projection QP; exact for short vectors."""
    n = len(z)
    best, best_val = None, np.inf
    for k in range(1, n + 1):
        for support in itertools.combinations(range(n), k):
            idx = list(support)
            theta = (z[idx].sum() - 1.0) / k
            x = np.zeros(n)
            x[idx] = z[idx] - theta
            if np.all(x >= -1e-15):
                val = np.sum((x - z) ** 2)
                if val < best_val:
                    best, best_val = x, val
    return best
