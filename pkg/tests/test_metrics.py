import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetsheaf.errors import ValidationError
from hetsheaf.metrics import MetricReport, aupr, auroc, f1_scores, mrr


def test_f1_examples():
    assert f1_scores([0, 1, 2], [0, 1, 2], 3) == (1.0, 1.0)
    macro, micro = f1_scores([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert math.isclose(micro, 0.5) and math.isclose(macro, 1 / 3)
    macro, micro = f1_scores([1, 1], [1, 1], 4)
    assert micro == 1.0 and macro == 0.25
    with pytest.raises(ValidationError):
        f1_scores([], [], 2)
    with pytest.raises(ValidationError):
        f1_scores([0, 1], [0], 2)


def test_f1_multilabel():
    true = np.array([[1, 0], [1, 1], [0, 1]])
    pred = np.array([[1, 0], [0, 1], [0, 0]])
    macro, micro = f1_scores(pred, true, 2, mode="multilabel")
    # class 0: tp1 fn1 -> 2/3; class 1: tp1 fn1 -> 2/3; pooled tp2 fn2 -> 2/3
    assert math.isclose(macro, 2 / 3) and math.isclose(micro, 2 / 3)


def test_micro_f1_is_accuracy(rng):
    true, pred = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
    assert math.isclose(f1_scores(pred, true, 5)[1], float((pred == true).mean()), rel_tol=1e-12)


def test_auroc_examples():
    assert auroc([0.9, 0.1], [1, 0]) == 1.0
    assert auroc([0.1, 0.9], [1, 0]) == 0.0
    assert auroc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(ValidationError):
        auroc([0.1, 0.2], [1, 1])


def _auroc_pairs(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    return np.mean([1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg)])


def _aupr_thresholds(scores, labels):
    total, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        chosen = scores >= thr
        tp = (labels[chosen] == 1).sum()
        recall = tp / labels.sum()
        total += (recall - prev_recall) * tp / chosen.sum()
        prev_recall = recall
    return total


def test_auroc_and_aupr_match_brute_force(rng):
    for _ in range(30):
        n = int(rng.integers(4, 30))
        scores = np.round(rng.random(n), 1)  # plenty of ties
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        assert math.isclose(auroc(scores, labels), _auroc_pairs(scores, labels), rel_tol=1e-12)
        assert math.isclose(aupr(scores, labels), _aupr_thresholds(scores, labels), rel_tol=1e-12)


def test_aupr_examples(rng):
    assert aupr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert aupr(np.linspace(1, 0, 10), [1] + [0] * 9) == 1.0
    n, p = 10_000, 0.3
    labels = (rng.random(n) < p).astype(int)
    assert abs(aupr(rng.random(n), labels) - labels.mean()) < 0.05
    with pytest.raises(ValidationError):
        aupr([0.1, 0.2], [0, 0])


def test_mrr_examples():
    assert mrr([[0.9, 0.1, 0.2], [0.5, 0.4]]) == 1.0
    assert mrr([[0.9, 0.1], [0.5, 0.7]]) == 0.75
    assert mrr([[0.3] * 4]) == 0.25
    assert mrr([[0.1, 0.9]], true_index=[1]) == 1.0
    with pytest.raises(ValidationError):
        mrr([[0.1, 0.2]], true_index=[2])
    with pytest.raises(ValidationError):
        mrr([])


def test_metric_report_validation():
    report = MetricReport({"auroc": 0.9}, seed=3, split_sizes={"test": 10})
    assert MetricReport.from_dict(report.to_dict()) == report
    assert report["auroc"] == 0.9
    with pytest.raises(ValidationError):
        MetricReport({"auroc": 1.5})
    with pytest.raises(ValidationError):
        MetricReport({"auroc": float("nan")})


scores_and_labels = st.integers(3, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-50, 50).map(lambda k: k / 10), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=80, deadline=None)
@given(scores_and_labels)
def test_ranking_metric_properties(data):
    scores, labels = np.array(data[0]), np.array(data[1])
    labels[0], labels[1] = 0, 1
    assert abs(auroc(scores, labels) + auroc(-scores, labels) - 1.0) < 1e-12
    transformed = np.exp(scores) * 3 + 1
    assert math.isclose(auroc(transformed, labels), auroc(scores, labels), rel_tol=1e-12)
    assert math.isclose(aupr(transformed, labels), aupr(scores, labels), rel_tol=1e-12)
    lists = [scores[:3], scores[1:]]
    assert mrr([np.exp(c) for c in lists]) == mrr(lists)
