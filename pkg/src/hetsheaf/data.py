"""On-disk dataset format, split generation and negative sampling.

A dataset directory holds::

    meta.json          task, type names, target type(s), class count
    nodes.tsv          node_id <TAB> type_id        (ids dense, ascending)
    edges.tsv          src <TAB> dst <TAB> etype
    feat_<t>.tsv       one whitespace-separated float row per type-t node
    labels.tsv         node_id <TAB> label   or   node_id <TAB> b0,b1,...   (nc)
    target_edges.tsv   head <TAB> tail                                       (lp)

Feature files are optional per type.  Link-prediction targets must also be
edges of the target edge type in ``edges.tsv``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import FeatureStore, HeteroGraph, LabelStore, canonicalize

RNG_TRAIN, RNG_SPLIT, RNG_VAL_NEG, RNG_TEST_NEG, RNG_INIT = 0, 1, 2, 3, 4


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Independent generator for one purpose (training, split, negatives) of a run seed."""
    return np.random.default_rng([int(seed), int(purpose)])


@dataclass
class Dataset:
    task: str
    graph: HeteroGraph
    features: FeatureStore
    node_type_names: list[str]
    edge_type_names: list[str]
    labels: LabelStore | None = None
    target_edges: np.ndarray | None = None
    target_edge_type: int | None = None
    head_type: int | None = None
    tail_type: int | None = None
    name: str = "dataset"
    extra: dict = field(default_factory=dict)
    latent: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.task not in ("nc", "lp"):
            raise ValidationError(f"task must be nc or lp, got {self.task!r}")
        self.features.validate(self.graph)
        if self.task == "nc":
            if self.labels is None:
                raise ValidationError("node-classification datasets need labels")
            ids = self.labels.node_ids
            if ids.size and (ids.min() < 0 or ids.max() >= self.graph.num_nodes):
                raise ValidationError("labels reference nodes outside the graph")
            if (self.graph.node_type[ids] != self.labels.target_type).any():
                raise ValidationError(f"labeled nodes must all have the target type {self.labels.target_type}")
            if np.unique(ids).size != ids.size:
                raise ValidationError("a node is labeled more than once")
        else:
            if self.target_edges is None or self.target_edge_type is None:
                raise ValidationError("link-prediction datasets need target edges and a target edge type")
            self.target_edges = np.asarray(self.target_edges, dtype=np.int64).reshape(-1, 2)
            self.target_edge_ids  # validates membership

    @property
    def target_types(self) -> list[int]:
        if self.task == "nc":
            return [self.labels.target_type]
        return sorted({self.head_type, self.tail_type})

    @property
    def target_edge_ids(self) -> np.ndarray:
        """Graph edge index of every target pair."""
        lookup = self.graph.edge_lookup()
        ids = []
        for i, (h, t) in enumerate(self.target_edges):
            key = (min(h, t), max(h, t), self.target_edge_type)
            if key not in lookup:
                raise ValidationError(f"target edge {i} ({h}, {t}) is not an edge of type {self.target_edge_type}")
            ids.append(lookup[key])
        return np.asarray(ids, dtype=np.int64)

    def meta(self) -> dict:
        meta = {"name": self.name, "task": self.task, "node_types": list(self.node_type_names),
                "edge_types": list(self.edge_type_names)}
        if self.task == "nc":
            meta.update(target_node_type=self.labels.target_type, num_classes=self.labels.num_classes,
                        multilabel=self.labels.multilabel)
        else:
            meta.update(target_edge_type=self.target_edge_type, head_node_type=self.head_type,
                        tail_node_type=self.tail_type)
        meta.update(self.extra)
        return meta


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------

def _read_rows(path: Path, width: int | None = None, sep: str | None = "\t"):
    """Yield ``(line number, fields)`` for non-empty lines."""
    if not path.exists():
        raise ValidationError(f"missing file: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split(sep) if sep else line.split()
            if width is not None and len(fields) != width:
                raise ValidationError(f"{path}:{lineno}: expected {width} fields, got {len(fields)}")
            yield lineno, fields


def _ints(path: Path, lineno: int, fields) -> list[int]:
    try:
        return [int(x) for x in fields]
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: expected integers, got {fields}") from None


def _read_features(path: Path) -> np.ndarray:
    rows = []
    for lineno, fields in _read_rows(path, sep=None):
        try:
            row = [float(x) for x in fields]
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric feature value") from None
        if not np.isfinite(row).all():
            raise ValidationError(f"{path}:{lineno}: non-finite feature value")
        if rows and len(row) != len(rows[0]):
            raise ValidationError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(row)}")
        rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise ValidationError(f"dataset directory not found: {root}")
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{meta_path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    for key in ("task", "node_types", "edge_types"):
        if key not in meta:
            raise ValidationError(f"{meta_path}: missing key {key!r}")
    num_node_types, num_edge_types = len(meta["node_types"]), len(meta["edge_types"])

    nodes_path = root / "nodes.tsv"
    node_type = []
    for lineno, fields in _read_rows(nodes_path, 2):
        node_id, t = _ints(nodes_path, lineno, fields)
        if node_id != len(node_type):
            raise ValidationError(f"{nodes_path}:{lineno}: node ids must be dense and ascending, "
                                  f"expected {len(node_type)}, got {node_id}")
        if not 0 <= t < num_node_types:
            raise ValidationError(f"{nodes_path}:{lineno}: node type {t} outside [0, {num_node_types})")
        node_type.append(t)
    n = len(node_type)

    edges_path = root / "edges.tsv"
    edges = []
    for lineno, fields in _read_rows(edges_path, 3):
        u, v, t = _ints(edges_path, lineno, fields)
        if not (0 <= u < n and 0 <= v < n):
            raise ValidationError(f"{edges_path}:{lineno}: edge ({u}, {v}) references a missing node")
        if not 0 <= t < num_edge_types:
            raise ValidationError(f"{edges_path}:{lineno}: edge type {t} outside [0, {num_edge_types})")
        edges.append((u, v, t))
    graph = canonicalize(node_type, edges, num_node_types, num_edge_types,
                         add_reverse_types=bool(meta.get("add_reverse_types", False)))

    counts = graph.type_counts()
    matrices = {}
    for t in range(num_node_types):
        feat_path = root / f"feat_{t}.tsv"
        if feat_path.exists():
            m = _read_features(feat_path)
            if m.shape[0] != counts[t]:
                raise ValidationError(f"{feat_path}: {m.shape[0]} feature rows for {counts[t]} nodes of type {t}")
            matrices[t] = m
    features = FeatureStore(matrices)

    known = {"name", "task", "node_types", "edge_types", "target_node_type", "num_classes", "multilabel",
             "target_edge_type", "head_node_type", "tail_node_type"}
    common = dict(task=meta["task"], graph=graph, features=features, node_type_names=list(meta["node_types"]),
                  edge_type_names=list(meta["edge_types"]), name=meta.get("name", root.name),
                  extra={k: v for k, v in meta.items() if k not in known})
    if meta["task"] == "nc":
        labels = _load_labels(root / "labels.tsv", meta, meta_path)
        return Dataset(labels=labels, **common)
    if meta["task"] == "lp":
        for key in ("target_edge_type", "head_node_type", "tail_node_type"):
            if key not in meta:
                raise ValidationError(f"{meta_path}: missing key {key!r}")
        target_path = root / "target_edges.tsv"
        pairs = [_ints(target_path, lineno, fields) for lineno, fields in _read_rows(target_path, 2)]
        for lineno, (h, t) in enumerate(pairs, 1):
            if graph.node_type[h] != meta["head_node_type"] or graph.node_type[t] != meta["tail_node_type"]:
                raise ValidationError(f"{target_path}:{lineno}: pair ({h}, {t}) does not match the head/tail types")
        return Dataset(target_edges=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
                       target_edge_type=int(meta["target_edge_type"]), head_type=int(meta["head_node_type"]),
                       tail_type=int(meta["tail_node_type"]), **common)
    raise ValidationError(f"{meta_path}: task must be nc or lp, got {meta['task']!r}")


def _load_labels(path: Path, meta: dict, meta_path: Path) -> LabelStore:
    for key in ("target_node_type", "num_classes"):
        if key not in meta:
            raise ValidationError(f"{meta_path}: missing key {key!r}")
    multilabel = bool(meta.get("multilabel", False))
    k = int(meta["num_classes"])
    ids, labels = [], []
    for lineno, fields in _read_rows(path, 2):
        (node_id,) = _ints(path, lineno, fields[:1])
        if multilabel:
            bits = _ints(path, lineno, fields[1].split(","))
            if len(bits) != k or any(b not in (0, 1) for b in bits):
                raise ValidationError(f"{path}:{lineno}: expected {k} comma-separated 0/1 values")
            labels.append(bits)
        else:
            (label,) = _ints(path, lineno, fields[1:])
            if not 0 <= label < k:
                raise ValidationError(f"{path}:{lineno}: label {label} outside [0, {k})")
            labels.append(label)
        ids.append(node_id)
    labels_arr = np.asarray(labels, dtype=np.int64).reshape((len(ids), k) if multilabel else (len(ids),))
    return LabelStore("multilabel" if multilabel else "multiclass", int(meta["target_node_type"]), k,
                      np.asarray(ids, dtype=np.int64), labels_arr)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_dataset(dataset: Dataset, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    g = dataset.graph
    (root / "meta.json").write_text(json.dumps(dataset.meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (root / "nodes.tsv").write_text("".join(f"{i}\t{t}\n" for i, t in enumerate(g.node_type)), encoding="utf-8")
    (root / "edges.tsv").write_text("".join(f"{u}\t{v}\t{t}\n" for u, v, t in g.edge_list()), encoding="utf-8")
    for t in dataset.features.types():
        rows = ("\t".join(_fmt(x) for x in row) + "\n" for row in dataset.features[t])
        (root / f"feat_{t}.tsv").write_text("".join(rows), encoding="utf-8")
    if dataset.task == "nc":
        lab = dataset.labels
        if lab.multilabel:
            lines = (f"{i}\t{','.join(str(int(b)) for b in row)}\n" for i, row in zip(lab.node_ids, lab.labels))
        else:
            lines = (f"{i}\t{int(y)}\n" for i, y in zip(lab.node_ids, lab.labels))
        (root / "labels.tsv").write_text("".join(lines), encoding="utf-8")
    else:
        (root / "target_edges.tsv").write_text("".join(f"{h}\t{t}\n" for h, t in dataset.target_edges),
                                               encoding="utf-8")


# ---------------------------------------------------------------------------
# Splits and negatives
# ---------------------------------------------------------------------------

@dataclass
class Split:
    """Disjoint index sets into the labeled nodes (nc) or the target edges (lp)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self) -> dict[str, int]:
        return {"train": int(self.train.size), "val": int(self.val.size), "test": int(self.test.size)}


def _split_permutation(count: int, n_val: int, n_test: int, seed: int) -> Split:
    perm = stream(seed, RNG_SPLIT).permutation(count)
    test, val, train = perm[:n_test], perm[n_test:n_test + n_val], perm[n_test + n_val:]
    return Split(np.sort(train), np.sort(val), np.sort(test), seed)


def make_nc_split(num_labeled: int, n_test: int = 1000, n_val: int = 500, seed: int = 0) -> Split:
    """Uniform split of ``num_labeled`` label rows; falls back to 50/25/25 when too few."""
    if num_labeled <= 0:
        raise ValidationError("cannot split a dataset without labeled nodes")
    if num_labeled < n_test + n_val + 1:
        n_val = n_test = num_labeled // 4
    return _split_permutation(num_labeled, n_val, n_test, seed)


def make_lp_split(num_target_edges: int, seed: int = 0) -> Split:
    """81/9/10 split of target edges (test and validation sizes rounded)."""
    if num_target_edges < 10:
        raise ValidationError(f"link-prediction split needs at least 10 target edges, got {num_target_edges}")
    n_test = int(round(0.10 * num_target_edges))
    n_val = int(round(0.09 * num_target_edges))
    return _split_permutation(num_target_edges, n_val, n_test, seed)


def training_graph(dataset: Dataset, split: Split) -> HeteroGraph:
    """Message-passing graph with validation and test positives removed."""
    ids = dataset.target_edge_ids
    return dataset.graph.subgraph_without(np.concatenate([ids[split.val], ids[split.test]]))


def _pair_keys(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    return np.minimum(a, b) * n + np.maximum(a, b)


def sample_negatives(positives, tail_nodes, known=None, ratio: int = 1,
                     seed: int | np.random.Generator = 0, num_nodes: int | None = None) -> np.ndarray:
    """Corrupt the tail of each positive ``(head, tail)`` pair ``ratio`` times.

    Replacement tails are drawn uniformly from ``tail_nodes`` and redrawn
    while the pair (in either orientation) is in ``known`` (default: the
    positives themselves).
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    tail_nodes = np.unique(np.asarray(tail_nodes, dtype=np.int64))
    if tail_nodes.size < 2:
        raise ValidationError("negative sampling needs at least two candidate tail nodes")
    if ratio < 1:
        raise ValidationError(f"ratio must be >= 1, got {ratio}")
    known = positives if known is None else np.asarray(known, dtype=np.int64).reshape(-1, 2)
    n = int(num_nodes if num_nodes is not None else max(positives.max(initial=0), known.max(initial=0),
                                                         tail_nodes.max()) + 1)
    known_keys = np.unique(_pair_keys(known[:, 0], known[:, 1], n))
    heads = np.repeat(positives[:, 0], ratio)

    # Infeasible when a head already links to every candidate tail.
    for h in np.unique(heads):
        taken = np.isin(_pair_keys(np.full(tail_nodes.size, h), tail_nodes, n), known_keys) | (tail_nodes == h)
        if taken.all():
            raise ValidationError(f"node {h} is linked to every candidate tail; no negative exists")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tails = tail_nodes[rng.integers(tail_nodes.size, size=heads.size)]
    bad = np.isin(_pair_keys(heads, tails, n), known_keys) | (tails == heads)
    while bad.any():
        idx = np.flatnonzero(bad)
        tails[idx] = tail_nodes[rng.integers(tail_nodes.size, size=idx.size)]
        bad[idx] = np.isin(_pair_keys(heads[idx], tails[idx], n), known_keys) | (tails[idx] == heads[idx])
    return np.stack([heads, tails], axis=1)
