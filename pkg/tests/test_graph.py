import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetsheaf.errors import ValidationError
from hetsheaf.graph import FeatureStore, HeteroGraph, LabelStore, canonicalize, one_hot, one_hot_type


def test_dedup_and_orientation():
    g = canonicalize([0, 0, 0], [(2, 1, 0), (1, 2, 0)])
    assert g.edge_list() == [(1, 2, 0)]


def test_parallel_edges_with_distinct_types_are_kept():
    g = canonicalize([0, 0], [(0, 1, 0), (1, 0, 1)])
    assert g.edge_list() == [(0, 1, 0), (0, 1, 1)]


def test_self_loop_dropped_with_warning():
    with pytest.warns(UserWarning, match="self-loop"):
        g = canonicalize([0, 0, 0, 1], [(3, 3, 1), (0, 1, 0)], num_edge_types=2)
    assert g.edge_list() == [(0, 1, 0)]


def test_dangling_endpoint_lists_offending_edges():
    with pytest.raises(ValidationError, match=r"\(0, 7, 0\)"):
        canonicalize([0, 0], [(0, 1, 0), (0, 7, 0)])


@pytest.mark.parametrize("edges, expected, num_types", [
    ([(1, 2, 0)], [(1, 2, 0)], 1),                      # one direction only: unchanged
    ([(2, 1, 0)], [(1, 2, 0)], 1),                      # reversed input, no partner: plain orientation
    ([(1, 2, 0), (2, 1, 0)], [(1, 2, 0), (1, 2, 1)], 2),  # both directions: reverse gets the derived type
    ([(1, 2, 0), (2, 1, 1)], [(1, 2, 0), (1, 2, 1)], 2),  # different types: no derived type needed
])
def test_add_reverse_types_cases(edges, expected, num_types):
    g = canonicalize([0, 0, 0], edges, add_reverse_types=True)
    assert g.edge_list() == expected
    assert g.num_edge_types == num_types


def test_add_reverse_types_second_case_keeps_declared_count():
    g = canonicalize([0, 0, 0], [(1, 2, 0), (2, 1, 1)], num_edge_types=2, add_reverse_types=True)
    assert g.num_edge_types == 2


def test_one_hot_type_examples():
    np.testing.assert_array_equal(one_hot_type("node", 0, 3), [1, 0, 0])
    np.testing.assert_array_equal(one_hot_type("edge", 2, 3), [0, 0, 1])
    np.testing.assert_array_equal(sum(one_hot_type("node", i, 4) for i in range(4)), np.ones(4))
    with pytest.raises(ValidationError):
        one_hot_type("node", 3, 3)
    with pytest.raises(ValidationError):
        one_hot([0, 5], 3)


def test_neighborhood_examples():
    path = canonicalize([0, 0, 0, 0], [(0, 1, 0), (1, 2, 0)])
    assert path.neighborhood(1) == [(0, 0, 0), (1, 2, 0)]
    assert path.neighborhood(3) == []
    tri = canonicalize([0, 0, 0], [(0, 1, 0), (1, 2, 0), (0, 2, 0)])
    assert all(len(tri.neighborhood(u)) == 2 for u in range(3))
    with pytest.raises(ValidationError):
        path.neighborhood(4)


def test_type_index_and_feature_rows():
    g = canonicalize([1, 0, 1, 0], [(0, 1, 0)])
    np.testing.assert_array_equal(g.type_index, [0, 0, 1, 1])
    fs = FeatureStore({0: np.array([[1.0], [2.0]]), 1: np.array([[10.0], [20.0]])})
    fs.validate(g)
    assert fs.row(g, 2)[0] == 20.0
    assert fs.row(g, 3)[0] == 2.0


def test_feature_store_rejects_non_finite_and_bad_counts():
    with pytest.raises(ValidationError):
        FeatureStore({0: np.array([[np.nan]])})
    g = canonicalize([0, 0], [(0, 1, 0)])
    with pytest.raises(ValidationError):
        FeatureStore({0: np.zeros((3, 2))}).validate(g)


def test_label_store_validation():
    LabelStore("multiclass", 0, 3, [0, 1], [0, 2])
    with pytest.raises(ValidationError):
        LabelStore("multiclass", 0, 3, [0, 1], [0, 3])
    with pytest.raises(ValidationError):
        LabelStore("multilabel", 0, 3, [0], [[1, 0]])
    assert LabelStore("multilabel", 0, 2, [0], [[1, 0]]).multilabel


def test_constructor_rejects_non_canonical_edges():
    with pytest.raises(ValidationError):
        HeteroGraph([0, 0], [1], [0], [0])


edge_lists = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(0, 2)), max_size=30)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_canonicalize_idempotent_and_degree_sum(edges):
    node_type = [i % 2 for i in range(8)]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = canonicalize(node_type, edges, 2, 3)
    again = canonicalize(node_type, g.edge_list(), 2, 3)
    assert again == g
    assert g.degrees().sum() == 2 * g.num_edges
    assert all(u < v for u, v, _ in g.edge_list())
