import numpy as np
import pytest

from hetsheaf.graph import HeteroGraph, canonicalize


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, num_node_types: int = 2,
                 num_edge_types: int = 2) -> HeteroGraph:
    node_type = rng.integers(num_node_types, size=n)
    node_type[:num_node_types] = np.arange(num_node_types)
    edges = [(u, v, int(rng.integers(num_edge_types)))
             for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return canonicalize(node_type, edges, num_node_types, num_edge_types)


def dense_graph_laplacian(graph: HeteroGraph) -> np.ndarray:
    n = graph.num_nodes
    A = np.zeros((n, n))
    A[graph.src, graph.dst] = 1.0
    A[graph.dst, graph.src] = 1.0
    return np.diag(A.sum(axis=1)) - A


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
