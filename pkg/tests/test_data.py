import json

import numpy as np
import pytest
from scipy import stats

from hetsheaf.data import (RNG_SPLIT, RNG_TRAIN, load_dataset, make_lp_split, make_nc_split, sample_negatives,
                           save_dataset, stream, training_graph)
from hetsheaf.errors import ValidationError
from hetsheaf.synth import bipartite_lp, type_signal_nc


def _write_fixture(root, **overrides):
    files = {
        "meta.json": json.dumps({"task": "nc", "node_types": ["paper", "author"], "edge_types": ["writes", "cites"],
                                 "target_node_type": 0, "num_classes": 2}),
        "nodes.tsv": "0\t0\n1\t0\n2\t1\n3\t1\n",
        "edges.tsv": "2\t0\t0\n3\t1\t0\n1\t0\t1\n0\t1\t1\n",
        "feat_0.tsv": "1.0 2.0\n3.0 4.0\n",
        "feat_1.tsv": "0.5\n-0.5\n",
        "labels.tsv": "0\t1\n1\t0\n",
    }
    files.update(overrides)
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        if text is not None:
            (root / name).write_text(text)
    return root


def test_four_node_fixture_loads(tmp_path):
    ds = load_dataset(_write_fixture(tmp_path / "d"))
    assert ds.graph.edge_list() == [(0, 1, 1), (0, 2, 0), (1, 3, 0)]
    np.testing.assert_array_equal(ds.features[0], [[1, 2], [3, 4]])
    np.testing.assert_array_equal(ds.labels.labels, [1, 0])
    assert ds.graph.neighborhood(0) == [(0, 1, 1), (1, 2, 0)]  # (edge id, neighbor, type)


def test_round_trip_is_byte_identical(tmp_path):
    for ds in (type_signal_nc(n=60, seed=1), bipartite_lp(n=60, seed=2)):
        a, b = tmp_path / f"{ds.name}_a", tmp_path / f"{ds.name}_b"
        save_dataset(ds, a)
        save_dataset(load_dataset(a), b)
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name
        again = load_dataset(b)
        np.testing.assert_array_equal(again.features[0], ds.features[0])


def test_multilabel_round_trip(tmp_path):
    meta = json.dumps({"task": "nc", "node_types": ["a", "b"], "edge_types": ["x", "y"], "target_node_type": 0,
                       "num_classes": 3, "multilabel": True})
    ds = load_dataset(_write_fixture(tmp_path / "m", **{"meta.json": meta, "labels.tsv": "0\t1,0,1\n1\t0,0,0\n"}))
    assert ds.labels.multilabel
    np.testing.assert_array_equal(ds.labels.labels, [[1, 0, 1], [0, 0, 0]])
    save_dataset(ds, tmp_path / "m2")
    assert (tmp_path / "m2" / "labels.tsv").read_text() == "0\t1,0,1\n1\t0,0,0\n"


@pytest.mark.parametrize("overrides, pattern", [
    ({"feat_0.tsv": "1.0 2.0\n"}, r"feat_0\.tsv"),
    ({"feat_1.tsv": "0.5\nnan\n"}, r"feat_1\.tsv:2"),
    ({"edges.tsv": "2\t0\t0\n3\t9\t0\n"}, r"edges\.tsv:2"),
    ({"edges.tsv": "2\t0\n"}, r"edges\.tsv:1"),
    ({"nodes.tsv": "0\t0\n2\t0\n"}, r"nodes\.tsv:2"),
    ({"labels.tsv": "0\t5\n"}, r"labels\.tsv:1"),
    ({"labels.tsv": None}, r"labels\.tsv"),
    ({"meta.json": "{\n  \"task\": \n"}, r"meta\.json:\d"),
])
def test_load_errors_name_file_and_line(tmp_path, overrides, pattern):
    with pytest.raises(ValidationError, match=pattern):
        load_dataset(_write_fixture(tmp_path / "bad", **overrides))


def test_add_reverse_types_flag(tmp_path):
    meta = json.dumps({"task": "nc", "node_types": ["a", "b"], "edge_types": ["x", "y"], "target_node_type": 0,
                       "num_classes": 2, "add_reverse_types": True})
    ds = load_dataset(_write_fixture(tmp_path / "r", **{"meta.json": meta, "edges.tsv": "0\t2\t0\n2\t0\t0\n"}))
    assert ds.graph.edge_list() == [(0, 2, 0), (0, 2, 2)]
    assert ds.graph.num_edge_types == 4  # reverse of type t is t + 2


def test_nc_split_sizes_and_determinism():
    assert make_nc_split(2000, seed=0).sizes() == {"train": 500, "val": 500, "test": 1000}
    assert make_nc_split(100, seed=0).sizes() == {"train": 50, "val": 25, "test": 25}
    a, b = make_nc_split(2000, seed=3), make_nc_split(2000, seed=3)
    np.testing.assert_array_equal(a.test, b.test)
    assert not np.array_equal(a.test, make_nc_split(2000, seed=4).test)
    parts = np.concatenate([a.train, a.val, a.test])
    assert np.unique(parts).size == 2000
    with pytest.raises(ValidationError):
        make_nc_split(0)


def test_lp_split_sizes_and_removed_edges():
    assert make_lp_split(100, seed=0).sizes() == {"train": 81, "val": 9, "test": 10}
    with pytest.raises(ValidationError):
        make_lp_split(9)
    ds = bipartite_lp(n=80, seed=0)
    split = make_lp_split(len(ds.target_edges), seed=1)
    np.testing.assert_array_equal(split.val, make_lp_split(len(ds.target_edges), seed=1).val)
    g = training_graph(ds, split)
    kept = {(u, v, t) for u, v, t in g.edge_list()}
    for idx in np.concatenate([split.val, split.test]):
        h, t = ds.target_edges[idx]
        assert (min(h, t), max(h, t), 0) not in kept
    for idx in split.train:
        h, t = ds.target_edges[idx]
        assert (min(h, t), max(h, t), 0) in kept
    assert g.num_edges == ds.graph.num_edges - split.val.size - split.test.size


def test_negative_sampling_rules():
    pos = np.array([[0, 5], [1, 6], [2, 7], [0, 6]])
    tails = np.arange(5, 10)
    neg = sample_negatives(pos, tails, seed=0)
    assert neg.shape == pos.shape
    np.testing.assert_array_equal(neg[:, 0], pos[:, 0])
    pos_set = {tuple(p) for p in pos}
    assert not any(tuple(n) in pos_set for n in neg)
    assert np.isin(neg[:, 1], tails).all()
    np.testing.assert_array_equal(neg, sample_negatives(pos, tails, seed=0))
    assert sample_negatives(pos, tails, ratio=3, seed=0).shape == (12, 2)
    with pytest.raises(ValidationError):
        sample_negatives([[0, 5], [0, 6]], [5, 6])
    with pytest.raises(ValidationError):
        sample_negatives(pos, [5])


def test_negative_tails_are_uniform():
    pos = np.array([[0, 10]] * 10_000)
    tails = np.arange(10, 20)
    neg = sample_negatives(pos, tails, seed=123)
    counts = np.bincount(neg[:, 1] - 10, minlength=10)
    assert counts[0] == 0  # the positive tail is never drawn
    _, p = stats.chisquare(counts[1:])
    assert p > 0.01


def test_streams_are_independent_and_reproducible():
    a = stream(5, RNG_TRAIN).random(4)
    np.testing.assert_array_equal(a, stream(5, RNG_TRAIN).random(4))
    assert not np.array_equal(a, stream(5, RNG_SPLIT).random(4))
