"""Task heads: node-classification MLP and link-prediction decoders with their losses."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError
from .nn import MLP, Module, parameter

DECODER_KINDS = ("dot", "distmult", "concat")


class NodeClassifier(Module):
    """One hidden layer (width = embedding width) followed by a linear output."""

    def __init__(self, in_features: int, num_classes: int, rng: np.random.Generator, activation: str = "elu"):
        self.num_classes = num_classes
        self.mlp = MLP([in_features, in_features, num_classes], rng, activation=activation)

    def __call__(self, o) -> Tensor:
        return self.mlp(ad.as_tensor(o))


def _check_labels(labels: np.ndarray, num_classes: int, multilabel: bool, rows: int) -> np.ndarray:
    labels = np.asarray(labels)
    if multilabel:
        if labels.shape != (rows, num_classes) or not np.isin(labels, (0, 1)).all():
            raise ValidationError(f"multilabel targets must be a binary ({rows}, {num_classes}) matrix")
        return labels.astype(np.float64)
    labels = labels.astype(np.int64)
    if labels.shape != (rows,):
        raise ValidationError(f"expected {rows} class labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"class labels must lie in [0, {num_classes})")
    return labels


def nc_loss(logits, labels, multilabel: bool = False) -> Tensor:
    """Mean softmax cross-entropy, or mean per-class sigmoid BCE for multilabel targets."""
    logits = ad.as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    n, k = logits.shape
    if n == 0:
        raise ValidationError("nc_loss needs at least one labeled node")
    labels = _check_labels(labels, k, multilabel, n)
    if multilabel:
        # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
        return (ad.softplus(logits) - logits * labels).mean()
    picked = ad.log_softmax(logits, axis=1)[np.arange(n), labels]
    return -picked.mean()


def nc_head(head: NodeClassifier, o, labels, multilabel: bool = False) -> tuple[Tensor, Tensor]:
    logits = head(o)
    return nc_loss(logits, labels, multilabel), logits


class LinkDecoder(Module):
    """Scores node pairs from their embeddings; ``logits`` precede the sigmoid."""

    def __init__(self, kind: str, in_features: int, num_edge_types: int = 1,
                 rng: np.random.Generator | None = None, activation: str = "elu"):
        if kind not in DECODER_KINDS:
            raise ValidationError(f"unknown decoder {kind!r}; choose from {DECODER_KINDS}")
        self.kind = kind
        self.in_features = in_features
        self.num_edge_types = num_edge_types
        self.W = None
        self.mlp = None
        if kind == "distmult":
            self.W = parameter(np.broadcast_to(np.eye(in_features), (num_edge_types, in_features, in_features)).copy())
        elif kind == "concat":
            if rng is None:
                raise ValidationError("the concat decoder needs an rng to initialize its network")
            self.mlp = MLP([2 * in_features, in_features, 1], rng, activation=activation)

    def logits(self, h_u, h_v, edge_type=None) -> Tensor:
        h_u, h_v = ad.as_tensor(h_u), ad.as_tensor(h_v)
        if h_u.shape != h_v.shape or h_u.ndim != 2 or h_u.shape[1] != self.in_features:
            raise DimensionError(
                f"decoder expects two (k, {self.in_features}) embedding batches, got {h_u.shape} and {h_v.shape}"
            )
        if self.kind == "dot":
            return (h_u * h_v).sum(axis=1)
        if self.kind == "concat":
            return self.mlp(ad.concat([h_u, h_v], axis=1)).reshape(-1)
        k = h_u.shape[0]
        types = np.zeros(k, dtype=np.int64) if edge_type is None else np.broadcast_to(
            np.asarray(edge_type, dtype=np.int64), (k,))
        if types.size and (types.min() < 0 or types.max() >= self.num_edge_types):
            raise ValidationError(f"edge type outside [0, {self.num_edge_types}) for the DistMult decoder")
        Wh = ad.take(self.W, types) @ h_v.reshape(k, self.in_features, 1)
        return (h_u * Wh.reshape(k, self.in_features)).sum(axis=1)

    def __call__(self, h_u, h_v, edge_type=None) -> Tensor:
        return ad.sigmoid(self.logits(h_u, h_v, edge_type))


def lp_score(decoder: LinkDecoder, h_u, h_v, edge_type=None) -> Tensor:
    return decoder(h_u, h_v, edge_type)


def _check_pair(pos: Tensor, neg: Tensor):
    if pos.size == 0:
        raise ValidationError("link-prediction loss needs at least one positive pair")
    if neg.size == 0:
        raise ValidationError("link-prediction loss needs at least one negative pair")


def lp_loss(scores_pos, scores_neg) -> Tensor:
    """BCE on probabilities: positives labeled 1, negatives 0, mean over all pairs."""
    pos, neg = ad.as_tensor(scores_pos).reshape(-1), ad.as_tensor(scores_neg).reshape(-1)
    _check_pair(pos, neg)
    total = -(ad.log(pos).sum() + ad.log(1.0 - neg).sum())
    return total / float(pos.size + neg.size)


def lp_loss_from_logits(logits_pos, logits_neg) -> Tensor:
    """Same value as :func:`lp_loss` on ``sigmoid(logits)``, without saturating logs."""
    pos, neg = ad.as_tensor(logits_pos).reshape(-1), ad.as_tensor(logits_neg).reshape(-1)
    _check_pair(pos, neg)
    total = ad.softplus(-pos).sum() + ad.softplus(neg).sum()
    return total / float(pos.size + neg.size)
