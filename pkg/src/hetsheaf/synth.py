"""Seeded synthetic heterogeneous graphs with planted, type-dependent signal.

Each generator returns a :class:`Dataset` whose ``latent`` dict holds the
planted variables, so tests can recompute labels from the generative rule.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .errors import ValidationError
from .data import Dataset
from .graph import FeatureStore, LabelStore, canonicalize

SYNTH_KINDS = ("type_signal_nc", "conflicting_edges_nc", "bipartite_lp")


def type_signal_nc(n: int = 400, seed: int = 0, degree: int = 6, feat_dim: int = 8,
                   noise: float = 0.5, offset: float = 1.0, target_fraction: float = 0.75) -> Dataset:
    """Targets (type 0) link to auxiliary nodes (type 1) via two edge types.

    A target's label is 1 iff it has more type-1 than type-0 edges.  The
    type-1 count is never ``degree/2``, so the label is never a tie.  All
    features are ``offset`` plus Gaussian noise: the signal lives in the
    edge types only.
    """
    if n < 2 * (degree + 1):
        raise ValidationError(f"type_signal_nc needs n >= {2 * (degree + 1)}, got {n}")
    rng = np.random.default_rng(seed)
    n_target = int(round(n * target_fraction))
    n_aux = n - n_target
    if n_aux < degree:
        raise ValidationError(f"type_signal_nc needs at least {degree} auxiliary nodes, got {n_aux}")
    choices = [c for c in range(degree + 1) if 2 * c != degree]
    edges, counts = [], np.zeros((n_target, 2), dtype=np.int64)
    for u in range(n_target):
        c1 = int(rng.choice(choices))
        aux = n_target + rng.choice(n_aux, size=degree, replace=False)
        types = np.array([1] * c1 + [0] * (degree - c1))
        rng.shuffle(types)
        for v, t in zip(aux, types):
            edges.append((u, int(v), int(t)))
        counts[u] = [degree - c1, c1]
    node_type = np.array([0] * n_target + [1] * n_aux)
    labels = (counts[:, 1] > counts[:, 0]).astype(np.int64)
    features = FeatureStore({0: offset + noise * rng.normal(size=(n_target, feat_dim)),
                             1: offset + noise * rng.normal(size=(n_aux, feat_dim))})
    graph = canonicalize(node_type, edges, 2, 2)
    return Dataset("nc", graph, features, ["target", "aux"], ["kind0", "kind1"],
                   labels=LabelStore("multiclass", 0, 2, np.arange(n_target), labels),
                   name="type_signal_nc", latent={"edge_type_counts": counts})


def type_signal_labels(dataset: Dataset) -> np.ndarray:
    """Recompute type_signal_nc labels from the graph alone."""
    g = dataset.graph
    ids = dataset.labels.node_ids
    out = np.empty(ids.size, dtype=np.int64)
    for i, u in enumerate(ids):
        types = [t for _, _, t in g.neighborhood(int(u))]
        out[i] = int(types.count(1) > types.count(0))
    return out


def conflicting_edges_nc(n_target: int = 200, n_aux: int = 100, seed: int = 0, k: int = 3,
                         feat_dim: int = 4, noise: float = 0.3) -> Dataset:
    """Two edge types with opposite-sign label correlations.

    Auxiliary nodes carry a sign ``a = +-1`` in feature 0 (plus noise).  A
    target with latent sign ``s`` has ``k`` type-0 edges to auxiliaries with
    ``a = s`` and ``k`` type-1 edges to auxiliaries with ``a = -s``.  Ignoring
    edge types, every target sees the same neighbor sign multiset, so
    type-blind aggregation carries no label information.
    """
    rng = np.random.default_rng(seed)
    half = n_aux // 2
    if half < k or n_aux - half < k:
        raise ValidationError(f"conflicting_edges_nc needs at least {k} auxiliaries of each sign")
    a = np.array([1] * half + [-1] * (n_aux - half))
    rng.shuffle(a)
    s = rng.choice([-1, 1], size=n_target)
    pools = {1: n_target + np.flatnonzero(a == 1), -1: n_target + np.flatnonzero(a == -1)}
    edges = []
    for u in range(n_target):
        for v in rng.choice(pools[int(s[u])], size=k, replace=False):
            edges.append((u, int(v), 0))
        for v in rng.choice(pools[-int(s[u])], size=k, replace=False):
            edges.append((u, int(v), 1))
    aux_feat = noise * rng.normal(size=(n_aux, feat_dim))
    aux_feat[:, 0] += a
    features = FeatureStore({0: noise * rng.normal(size=(n_target, feat_dim)), 1: aux_feat})
    node_type = np.array([0] * n_target + [1] * n_aux)
    graph = canonicalize(node_type, edges, 2, 2)
    labels = (s > 0).astype(np.int64)
    return Dataset("nc", graph, features, ["target", "aux"], ["agree", "disagree"],
                   labels=LabelStore("multiclass", 0, 2, np.arange(n_target), labels),
                   name="conflicting_edges_nc", latent={"target_sign": s, "aux_sign": a})


def _plugin_accuracy(signatures, labels) -> float:
    groups = defaultdict(lambda: [0, 0])
    for sig, y in zip(signatures, labels):
        groups[sig][int(y)] += 1
    return sum(max(c) for c in groups.values()) / len(labels)


def conflicting_bayes_accuracy(dataset: Dataset, typed: bool = True) -> float:
    """Best accuracy of a rule that sees the planted neighbor signs.

    Targets are grouped by the multiset of neighbor signs (split by edge
    type when ``typed``) and each group predicts its majority label.
    """
    g = dataset.graph
    n_target = int((g.node_type == 0).sum())
    aux_sign = dataset.latent["aux_sign"]
    signatures = []
    for u in dataset.labels.node_ids:
        by_type = {0: [], 1: []}
        for _, v, t in g.neighborhood(int(u)):
            by_type[t if typed else 0].append(int(aux_sign[v - n_target]))
        signatures.append((tuple(sorted(by_type[0])), tuple(sorted(by_type[1]))))
    return _plugin_accuracy(signatures, dataset.labels.labels)


def bipartite_lp(n: int = 300, seed: int = 0, rank: int = 4, k: int = 6, feat_dim: int = 8,
                 noise: float = 0.3, link_noise: float = 0.1, social: int = 2) -> Dataset:
    """Users (type 0) and items (type 1) with a planted low-rank preference.

    User ``u`` likes item ``i`` (edge type 0) iff ``z_u . z_i + link_noise * eps``
    exceeds the global threshold that leaves ``k`` likes per user on average.
    Each user is also linked (edge type 1) to its ``social`` most similar
    users.  Features are the latent vectors plus noise, padded with
    pure-noise columns up to ``feat_dim``.
    """
    if feat_dim < rank:
        raise ValidationError(f"feat_dim ({feat_dim}) must be >= rank ({rank})")
    rng = np.random.default_rng(seed)
    n_users, n_items = n // 2, n - n // 2
    if not 0 < k < n_items:
        raise ValidationError(f"k={k} must lie in (0, {n_items})")
    zu = rng.normal(size=(n_users, rank))
    zi = rng.normal(size=(n_items, rank))
    utility = zu @ zi.T + link_noise * rng.normal(size=(n_users, n_items))
    threshold = np.quantile(utility, 1.0 - k / n_items)
    target = [(int(u), n_users + int(i)) for u, i in np.argwhere(utility > threshold)]
    edges = [(u, v, 0) for u, v in target]
    if social:
        unit = zu / np.linalg.norm(zu, axis=1, keepdims=True)
        sim = unit @ unit.T
        np.fill_diagonal(sim, -np.inf)
        for u in range(n_users):
            for w in np.argsort(-sim[u], kind="stable")[:social]:
                edges.append((u, int(w), 1))

    def feats(z):
        out = noise * rng.normal(size=(z.shape[0], feat_dim))
        out[:, :rank] += z
        return out

    features = FeatureStore({0: feats(zu), 1: feats(zi)})
    node_type = np.array([0] * n_users + [1] * n_items)
    graph = canonicalize(node_type, edges, 2, 2)
    return Dataset("lp", graph, features, ["user", "item"], ["likes", "similar"],
                   target_edges=np.asarray(target, dtype=np.int64), target_edge_type=0, head_type=0, tail_type=1,
                   name="bipartite_lp", latent={"user": zu, "item": zi, "threshold": threshold})


def generate(kind: str, seed: int = 0, **sizes) -> Dataset:
    if kind == "type_signal_nc":
        return type_signal_nc(seed=seed, **sizes)
    if kind == "conflicting_edges_nc":
        return conflicting_edges_nc(seed=seed, **sizes)
    if kind == "bipartite_lp":
        return bipartite_lp(seed=seed, **sizes)
    raise ValidationError(f"unknown synthetic dataset {kind!r}; choose from {SYNTH_KINDS}")
