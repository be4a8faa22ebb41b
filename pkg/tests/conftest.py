import os

import numpy as np
import pytest

from reachcast.graphs import DirectedGraph, load_edge_list


@pytest.fixture
def path_graph() -> DirectedGraph:
    return load_edge_list("a b\nb c\n")


@pytest.fixture
def star_graph() -> DirectedGraph:
    # inserted out of order on purpose: neighbor lists must come back sorted
    return load_edge_list("0 3\n0 1\n0 2\n")


@pytest.fixture
def diamond_graph() -> DirectedGraph:
    # u->v, u->w, v->w
    return load_edge_list("u v\nu w\nv w\n")


def random_graph(rng: np.random.Generator, n: int, m: int) -> DirectedGraph:
    """Random simple directed graph with at most m edges."""
    edges = set()
    for _ in range(m * 3):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((int(u), int(v)))
        if len(edges) >= m:
            break
    return DirectedGraph(n, edges)


def induced_subgraph(graph: DirectedGraph, nodes: np.ndarray) -> DirectedGraph:
    """Subgraph on the given nodes, relabeled densely in their order."""
    remap = {int(v): i for i, v in enumerate(nodes)}
    edges = [(remap[int(u)], remap[int(v)]) for u, v in graph.edges
             if int(u) in remap and int(v) in remap]
    return DirectedGraph(len(nodes), edges,
                         labels=[graph.labels[int(v)] for v in nodes])


EMAIL_EU_PATH = os.environ.get("REACHCAST_EMAIL_EU_CORE", "")

requires_email_eu = pytest.mark.skipif(
    not (EMAIL_EU_PATH and os.path.exists(EMAIL_EU_PATH)),
    reason="set REACHCAST_EMAIL_EU_CORE to the edge list path to enable")
