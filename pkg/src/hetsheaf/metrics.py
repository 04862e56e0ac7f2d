"""Evaluation metrics: macro/micro F1, AUROC, AUPR and MRR.

Tie conventions: AUROC counts a tied positive/negative pair as one half;
MRR ranks the true item after every candidate with an equal score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def f1_scores(pred, true, num_classes: int, mode: str = "multiclass") -> tuple[float, float]:
    """(macro, micro) F1 with the 0/0 -> 0 convention per class.

    ``multiclass`` takes integer label vectors; ``multilabel`` takes binary
    (N, K) indicator matrices.
    """
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValidationError(f"prediction shape {pred.shape} differs from label shape {true.shape}")
    if pred.shape[0] == 0:
        raise ValidationError("f1_scores needs at least one prediction")
    if mode == "multiclass":
        classes = np.arange(num_classes)
        P = pred.reshape(-1, 1) == classes
        T = true.reshape(-1, 1) == classes
    elif mode == "multilabel":
        if pred.ndim != 2 or pred.shape[1] != num_classes:
            raise ValidationError(f"multilabel inputs must be (N, {num_classes}) matrices")
        P, T = pred.astype(bool), true.astype(bool)
    else:
        raise ValidationError(f"mode must be multiclass or multilabel, got {mode!r}")
    tp = (P & T).sum(axis=0).astype(float)
    fp = (P & ~T).sum(axis=0).astype(float)
    fn = (~P & T).sum(axis=0).astype(float)
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    pooled = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / pooled if pooled > 0 else 0.0
    return float(per_class.mean()), float(micro)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [x.size]])
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def _binary_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValidationError(f"{scores.size} scores for {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be binary")
    if not np.isfinite(scores).all():
        raise ValidationError("scores contain NaN or Inf")
    return scores, labels.astype(bool)


def auroc(scores, labels) -> float:
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("auroc needs both positive and negative labels")
    rank_sum = _average_ranks(scores)[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Step integral ``sum_k (R_k - R_{k-1}) P_k`` over distinct score thresholds."""
    scores, labels = _binary_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValidationError("aupr needs at least one positive label")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.append(np.flatnonzero(np.diff(s)), s.size - 1)
    tp = np.cumsum(y)[last_of_group].astype(float)
    predicted = last_of_group + 1.0
    precision = tp / predicted
    recall = tp / n_pos
    gains = np.diff(np.concatenate([[0.0], recall]))
    return float((gains * precision).sum())


def mrr(candidate_scores, true_index=None) -> float:
    """Mean reciprocal rank of the true item in each candidate list.

    ``candidate_scores`` is a sequence of score vectors (or a 2-D array).
    ``true_index[i]`` marks the true item of list ``i``; it defaults to 0.
    """
    lists = [np.asarray(c, dtype=np.float64).reshape(-1) for c in candidate_scores]
    if not lists:
        raise ValidationError("mrr needs at least one query")
    if true_index is None:
        true_index = [0] * len(lists)
    if len(true_index) != len(lists):
        raise ValidationError(f"{len(true_index)} true indices for {len(lists)} candidate lists")
    total = 0.0
    for i, (c, t) in enumerate(zip(lists, true_index)):
        if not 0 <= int(t) < c.size:
            raise ValidationError(f"query {i}: true item {t} is not among its {c.size} candidates")
        rank = int((c >= c[int(t)]).sum())
        total += 1.0 / rank
    return total / len(lists)


@dataclass
class MetricReport:
    values: dict[str, float]
    seed: int | None = None
    split_sizes: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.values.items():
            if not math.isfinite(value) or not 0.0 <= value <= 1.0 + 1e-12:
                raise ValidationError(f"metric {name}={value} lies outside [0, 1]")

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> dict:
        return {"metrics": dict(self.values), "seed": self.seed, "split_sizes": dict(self.split_sizes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(dict(data["metrics"]), data.get("seed"), dict(data.get("split_sizes", {})))
