import warnings

import numpy as np
import pytest

from mlmf.data import MultiOmicsDataset, OmicsView
from mlmf.seminmf import FactorStack


def random_dataset(rng, dims=(6, 5), n=8, present=None):
    """Random views over ids g0..g{n-1}; ``present[v]`` lists the global
    positions a view covers (all by default)."""
    gids = [f"g{i}" for i in range(n)]
    views = []
    for v, D in enumerate(dims):
        cols = list(range(n)) if present is None else list(present[v])
        views.append(OmicsView(f"v{v}", rng.standard_normal((D, len(cols))),
                               [gids[j] for j in cols]))
    return MultiOmicsDataset(tuple(views), tuple(gids))


def random_stack(rng, D, n, sizes, name=""):
    dims = [D] + list(sizes)
    Z = [rng.standard_normal((dims[i], dims[i + 1])) for i in range(len(sizes))]
    H = [rng.uniform(0.1, 1.0, size=(d, n)) for d in sizes]
    return FactorStack(name, Z, H)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_small_counts():
    from mlmf.errors import SmallExpectedCounts
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallExpectedCounts)
        yield


# acceptance verdicts, filled by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
