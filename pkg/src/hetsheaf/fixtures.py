"""Tiny fixed datasets for gradient checks and smoke tests."""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .graph import FeatureStore, LabelStore, canonicalize

# 6 nodes: 0-2 are type 0, 3-5 are type 1; both edge types appear.
FIXTURE_NODE_TYPES = [0, 0, 0, 1, 1, 1]
FIXTURE_EDGES = [(0, 3, 0), (0, 4, 1), (1, 4, 0), (1, 5, 1), (2, 5, 0), (2, 3, 1), (0, 1, 0), (4, 5, 1)]


def six_node_fixture(seed: int = 7) -> Dataset:
    """Six nodes, two node types (feature widths 3 and 2), two edge types, two classes."""
    rng = np.random.default_rng(seed)
    graph = canonicalize(FIXTURE_NODE_TYPES, FIXTURE_EDGES, 2, 2)
    features = FeatureStore({0: rng.normal(size=(3, 3)), 1: rng.normal(size=(3, 2))})
    labels = LabelStore("multiclass", 0, 2, np.array([0, 1, 2]), np.array([0, 1, 1]))
    return Dataset("nc", graph, features, ["a", "b"], ["x", "y"], labels=labels, name="six_node_fixture")
