import numpy as np
import pytest

from paynet.graph import PaymentGraph


def make_graph(n, edges, weights=None, rating=None, status=None):
    """Tiny-graph helper: edges as (src, dst) pairs, unit weights by default."""
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
    return PaymentGraph([f"n{i}" for i in range(n)], src, dst, w,
                        rating=rating, status=status)


def random_digraph(n, p, seed, weights=False):
    rng = np.random.default_rng(seed)
    mask = (rng.uniform(size=(n, n)) < p) & ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(mask)
    w = rng.uniform(0.5, 10.0, size=len(src)) if weights else np.ones(len(src))
    return PaymentGraph([f"n{i}" for i in range(n)], src, dst, w)


@pytest.fixture
def three_cycle():
    return make_graph(3, [(0, 1), (1, 2), (2, 0)])
