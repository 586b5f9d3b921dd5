import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hetgfl.hetgraph import HeteroGraph, SplitSpec, make_split

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("HYPOTHESIS_EXAMPLES", "60")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_graph(seed, n=6, n_node_types=2, n_edge_types=3, n_classes=2, n_edges=None, dims=(3, 5)):
    """Small connected-ish typed graph with random features and labels."""
    rng = np.random.default_rng(seed)
    node_type = np.arange(n) % n_node_types
    rng.shuffle(node_type)
    pairs = set()
    # a path keeps every node non-isolated
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        pairs.add((min(a, b), max(a, b)))
    target = n_edges if n_edges is not None else n + n // 2
    while len(pairs) < min(target, n * (n - 1) // 2):
        a, b = rng.choice(n, 2, replace=False)
        pairs.add((min(a, b), max(a, b)))
    edges = np.array([(a, b, rng.integers(n_edge_types)) for a, b in sorted(pairs)], dtype=np.int64)
    features = {
        t: rng.uniform(-1, 1, size=(int(np.sum(node_type == t)), dims[t % len(dims)]))
        for t in range(n_node_types)
    }
    cls = np.arange(n) % n_classes
    rng.shuffle(cls)
    return HeteroGraph(
        node_type=node_type.astype(np.int64),
        features=features,
        edges=edges,
        labels=np.eye(n_classes)[cls],
        labeled=np.ones(n, dtype=bool),
        n_node_types=n_node_types,
        n_edge_types=n_edge_types,
    )


def with_all_train(graph):
    n = graph.n
    return graph.with_masks(
        {"train": np.ones(n, bool), "val": np.zeros(n, bool), "test": np.zeros(n, bool)}
    )


def with_standard_split(graph, seed=1):
    return graph.with_masks(make_split(graph.labels, graph.labeled, SplitSpec(seed=seed)))


@pytest.fixture
def tiny_graph():
    return with_all_train(random_graph(0))
