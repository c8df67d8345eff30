import numpy as np
import pytest

from communerase.graph import build_graph


def make_graph(edges, n=None, features=None, labels=None, num_classes=None, weights=None):
    """Small-graph builder for tests; defaults to 2-dim random-ish features."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 1
    if features is None:
        rng = np.random.default_rng(7)
        features = rng.normal(size=(n, 2))
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    return build_graph(edges, features, labels, num_classes=num_classes, weights=weights)


def random_graph(rng, n, edge_prob=0.2, d=3, num_classes=3):
    """Erdos-Renyi style labeled graph, deterministic from the given rng."""
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < edge_prob:
                edges.append((u, v))
    features = rng.normal(size=(n, d))
    labels = rng.integers(0, num_classes, size=n)
    return build_graph(np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                       features, labels, num_classes=num_classes)


@pytest.fixture
def triangle_pair_bridge():
    """Two triangles {0,1,2}, {3,4,5} joined by the bridge 2-3 (m=7)."""
    return make_graph([(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)])
