"""Heterogeneous graphs with typed nodes/edges and per-type feature stores.

Edges are stored once, oriented ``u < v``.  That orientation doubles as the
edge direction of the coboundary operator.  Node ids are global; the row of
node ``u`` inside its type's feature matrix is ``graph.type_index[u]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError


def _readonly(a, dtype=np.int64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class HeteroGraph:
    """Immutable undirected heterogeneous graph.

    Use :func:`canonicalize` to build one from raw (possibly directed,
    duplicated) edge lists; the constructor only validates.
    """

    def __init__(self, node_type, src, dst, edge_type, num_node_types: int | None = None,
                 num_edge_types: int | None = None):
        self.node_type = _readonly(node_type)
        self.src = _readonly(src)
        self.dst = _readonly(dst)
        self.edge_type = _readonly(edge_type)
        n = self.node_type.shape[0]
        if not (self.src.shape == self.dst.shape == self.edge_type.shape) or self.src.ndim != 1:
            raise ValidationError("src, dst and edge_type must be 1-D arrays of equal length")
        if n and self.node_type.min() < 0:
            raise ValidationError("node types must be non-negative integers")
        self.num_node_types = int(num_node_types if num_node_types is not None
                                  else (self.node_type.max() + 1 if n else 0))
        self.num_edge_types = int(num_edge_types if num_edge_types is not None
                                  else (self.edge_type.max() + 1 if self.src.size else 0))
        if n and self.node_type.max() >= self.num_node_types:
            raise ValidationError(f"node type {self.node_type.max()} >= declared count {self.num_node_types}")
        if self.src.size:
            bad = (self.src < 0) | (self.dst >= n) | (self.src >= self.dst)
            if bad.any():
                i = np.flatnonzero(bad)[:5]
                raise ValidationError(
                    f"edges must satisfy 0 <= u < v < {n}; offending: "
                    f"{[(int(self.src[k]), int(self.dst[k])) for k in i]}"
                )
            if self.edge_type.min() < 0 or self.edge_type.max() >= self.num_edge_types:
                raise ValidationError(f"edge types must lie in [0, {self.num_edge_types})")

    def __repr__(self):
        return (f"HeteroGraph(n={self.num_nodes}, m={self.num_edges}, "
                f"|Phi|={self.num_node_types}, |Psi|={self.num_edge_types})")

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (self.num_node_types == other.num_node_types
                and self.num_edge_types == other.num_edge_types
                and np.array_equal(self.node_type, other.node_type)
                and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.edge_type, other.edge_type))

    __hash__ = None

    @property
    def num_nodes(self) -> int:
        return int(self.node_type.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def edge_list(self) -> list[tuple[int, int, int]]:
        return [(int(u), int(v), int(t)) for u, v, t in zip(self.src, self.dst, self.edge_type)]

    @cached_property
    def type_index(self) -> np.ndarray:
        """Row of each node inside its own type's feature matrix."""
        idx = np.zeros(self.num_nodes, dtype=np.int64)
        for t in range(self.num_node_types):
            members = np.flatnonzero(self.node_type == t)
            idx[members] = np.arange(members.size)
        idx.setflags(write=False)
        return idx

    def nodes_of_type(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.node_type == t)

    def type_counts(self) -> list[int]:
        return np.bincount(self.node_type, minlength=self.num_node_types).tolist()

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.src, self.dst]), minlength=self.num_nodes)

    @cached_property
    def _incidence(self) -> tuple[np.ndarray, np.ndarray]:
        # CSR over nodes; each row lists incident edge ids in ascending order.
        nodes = np.concatenate([self.src, self.dst])
        edges = np.concatenate([np.arange(self.num_edges)] * 2)
        order = np.lexsort((edges, nodes))
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(nodes, minlength=self.num_nodes), out=indptr[1:])
        return indptr, edges[order]

    def neighborhood(self, u: int) -> list[tuple[int, int, int]]:
        """Incident edges of ``u`` as ``(edge index, other endpoint, edge type)``."""
        if not 0 <= u < self.num_nodes:
            raise ValidationError(f"node {u} out of range [0, {self.num_nodes})")
        indptr, edge_ids = self._incidence
        out = []
        for e in edge_ids[indptr[u]:indptr[u + 1]]:
            other = self.dst[e] if self.src[e] == u else self.src[e]
            out.append((int(e), int(other), int(self.edge_type[e])))
        return out

    def edge_lookup(self) -> dict[tuple[int, int, int], int]:
        return {key: i for i, key in enumerate(self.edge_list())}

    def subgraph_without(self, edge_ids) -> "HeteroGraph":
        """Same node set with the given edges removed; type counts unchanged."""
        keep = np.ones(self.num_edges, dtype=bool)
        keep[np.asarray(edge_ids, dtype=np.int64)] = False
        return HeteroGraph(self.node_type, self.src[keep], self.dst[keep], self.edge_type[keep],
                           self.num_node_types, self.num_edge_types)

    def permuted(self, perm) -> "HeteroGraph":
        """Relabel node ``u`` as ``perm[u]``."""
        perm = np.asarray(perm, dtype=np.int64)
        node_type = np.empty_like(self.node_type)
        node_type[perm] = self.node_type
        edges = [(int(perm[u]), int(perm[v]), t) for u, v, t in self.edge_list()]
        return canonicalize(node_type, edges, num_node_types=self.num_node_types,
                            num_edge_types=self.num_edge_types)


def canonicalize(node_type, edges, num_node_types: int | None = None, num_edge_types: int | None = None,
                 add_reverse_types: bool = False) -> HeteroGraph:
    """Build a :class:`HeteroGraph` from raw ``(u, v, edge_type)`` triples.

    Each edge is oriented ``u < v`` and exact duplicates merge.  Self-loops
    are dropped with a warning.  With ``add_reverse_types``, an edge listed in
    both directions with the same type keeps both as distinct types: the
    canonical one as ``t`` and the reversed one as ``t + num_edge_types``.
    A one-directional edge keeps its type.
    """
    node_type = np.asarray(node_type, dtype=np.int64)
    n = node_type.shape[0]
    raw = [(int(u), int(v), int(t)) for u, v, t in edges]
    dangling = [e for e in raw if not (0 <= e[0] < n and 0 <= e[1] < n)]
    if dangling:
        raise ValidationError(f"edges reference nodes outside [0, {n}): {dangling[:10]}")
    bad_types = [e for e in raw if e[2] < 0]
    if bad_types:
        raise ValidationError(f"negative edge types: {bad_types[:10]}")
    if num_edge_types is None:
        num_edge_types = max((t for _, _, t in raw), default=-1) + 1
    over = [e for e in raw if e[2] >= num_edge_types]
    if over:
        raise ValidationError(f"edge types >= declared count {num_edge_types}: {over[:10]}")

    loops = [e for e in raw if e[0] == e[1]]
    if loops:
        warnings.warn(f"dropping {len(loops)} self-loop(s), e.g. {loops[0]}", stacklevel=2)
    present = set(raw)
    result = set()
    derived_used = False
    for u, v, t in raw:
        if u == v:
            continue
        if u < v:
            result.add((u, v, t))
        elif add_reverse_types and (v, u, t) in present:
            result.add((v, u, t + num_edge_types))
            derived_used = True
        else:
            result.add((v, u, t))
    total_types = 2 * num_edge_types if derived_used else num_edge_types
    ordered = sorted(result)
    src = [e[0] for e in ordered]
    dst = [e[1] for e in ordered]
    etype = [e[2] for e in ordered]
    return HeteroGraph(node_type, src, dst, etype, num_node_types, total_types)


def one_hot_type(kind: str, type_id: int, cardinality: int) -> np.ndarray:
    """Unit basis vector ``e_type_id`` of length ``cardinality``."""
    if kind not in ("node", "edge"):
        raise ValidationError(f"kind must be 'node' or 'edge', got {kind!r}")
    if not 0 <= type_id < cardinality:
        raise ValidationError(f"{kind} type {type_id} out of range [0, {cardinality})")
    v = np.zeros(cardinality)
    v[type_id] = 1.0
    return v


def one_hot(ids, cardinality: int) -> np.ndarray:
    """Row-wise one-hot matrix for an integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= cardinality):
        raise ValidationError(f"type ids out of range [0, {cardinality})")
    out = np.zeros((ids.shape[0], cardinality))
    out[np.arange(ids.shape[0]), ids] = 1.0
    return out


class FeatureStore:
    """Per-node-type feature matrices; row ``i`` of type ``t`` is the i-th type-t node."""

    def __init__(self, matrices: dict[int, np.ndarray] | None = None):
        self.matrices = {int(t): np.asarray(m, dtype=np.float64) for t, m in (matrices or {}).items()}
        for t, m in self.matrices.items():
            if m.ndim != 2:
                raise ValidationError(f"features of type {t} must be a 2-D matrix, got shape {m.shape}")
            if not np.isfinite(m).all():
                raise ValidationError(f"features of type {t} contain NaN or Inf")

    def __contains__(self, t: int) -> bool:
        return t in self.matrices

    def __getitem__(self, t: int) -> np.ndarray:
        return self.matrices[t]

    def types(self) -> list[int]:
        return sorted(self.matrices)

    def dim(self, t: int) -> int | None:
        return self.matrices[t].shape[1] if t in self.matrices else None

    def validate(self, graph: HeteroGraph):
        counts = graph.type_counts()
        for t, m in self.matrices.items():
            if not 0 <= t < graph.num_node_types:
                raise ValidationError(f"feature matrix for unknown node type {t}")
            if m.shape[0] != counts[t]:
                raise ValidationError(f"type {t}: {m.shape[0]} feature rows for {counts[t]} nodes")

    def row(self, graph: HeteroGraph, u: int) -> np.ndarray:
        return self.matrices[int(graph.node_type[u])][graph.type_index[u]]


@dataclass
class LabelStore:
    """Labels of target-type nodes.

    ``labels`` is an int vector (multiclass) or a binary ``(N, K)`` matrix
    (multilabel), aligned with ``node_ids``.
    """

    task: str
    target_type: int
    num_classes: int
    node_ids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.task not in ("multiclass", "multilabel"):
            raise ValidationError(f"label task must be multiclass or multilabel, got {self.task!r}")
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        if self.task == "multiclass":
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.node_ids.shape:
                raise ValidationError("one multiclass label per node id is required")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValidationError(f"multiclass labels must lie in [0, {self.num_classes})")
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(self.node_ids), -1)
            if self.labels.shape[1] != self.num_classes:
                raise ValidationError(f"multilabel vectors must have length {self.num_classes}")
            if not np.isin(self.labels, (0, 1)).all():
                raise ValidationError("multilabel vectors must be binary")

    @property
    def multilabel(self) -> bool:
        return self.task == "multilabel"

    def __len__(self):
        return len(self.node_ids)
