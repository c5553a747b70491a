import numpy as np
import pytest

from flowconvgru.flowgraph import SparseFlowMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_flow(rng, n, density=0.4, allow_empty=True):
    """Random sparse flow matrix for property tests."""
    entries = []
    for i in range(n):
        for j in range(n):
            if rng.uniform() < density:
                entries.append((i, j, float(rng.uniform(0.1, 5.0))))
    if not entries and not allow_empty:
        entries.append((0, min(1, n - 1), 1.0))
    return SparseFlowMatrix.from_entries(n, entries)
