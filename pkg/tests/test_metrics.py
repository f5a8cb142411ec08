from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probe_bench.errors import DataError
from probe_bench.metrics import (
    PooledPredictions,
    accuracy,
    balanced_accuracy,
    binary_auc_midrank,
    compute_metrics,
    macro_f1,
    macro_ovr_auc,
    midranks,
)


def brute_force_binary_auc(scores, positive):
    """Oracle: count positive-negative pairs with wins + half ties."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    pos = scores[positive]
    neg = scores[~positive]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_force_macro_auc(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    aucs = [
        brute_force_binary_auc(scores[:, k], labels == k) for k in range(scores.shape[1])
    ]
    return float(np.mean(aucs))


def pooled(labels, scores, ids=None):
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if ids is None:
        ids = tuple(f"s{i}" for i in range(len(labels)))
    return PooledPredictions(ids=ids, labels=labels, scores=scores)


def test_binary_auc_hand_case():
    # positives score (0.3, 0.8) against negatives (0.4, 0.2): 3 of 4 pairs won
    labels = [0, 1, 0, 1]
    class1 = [0.4, 0.3, 0.2, 0.8]
    auc = binary_auc_midrank(np.array(class1), np.array(labels) == 1)
    assert auc == pytest.approx(0.75, abs=1e-15)
    assert brute_force_binary_auc(class1, np.array(labels) == 1) == pytest.approx(0.75)


def test_midranks_average_tie_groups():
    ranks = midranks(np.array([10.0, 20.0, 20.0, 30.0]))
    assert ranks.tolist() == [1.0, 2.5, 2.5, 4.0]
    ranks = midranks(np.array([5.0, 5.0, 5.0]))
    assert ranks.tolist() == [2.0, 2.0, 2.0]


def test_all_tied_scores_give_half_auc():
    labels = np.array([0] * 5 + [1] * 3)
    scores = np.ones((8, 2))
    p = pooled(labels, scores)
    assert macro_ovr_auc(p) == pytest.approx(0.5, abs=1e-15)


def test_midrank_matches_brute_force_with_heavy_ties():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(4, 51))
        labels = rng.integers(0, 3, size=n)
        # force every class to appear on both sides
        labels[:3] = [0, 1, 2]
        labels[3] = rng.integers(0, 3)
        scores = rng.choice([0.0, 0.25, 0.5, 1.0], size=(n, 3))
        p = pooled(labels, scores)
        assert macro_ovr_auc(p) == pytest.approx(
            brute_force_macro_auc(labels, scores), abs=1e-12
        )


def test_auc_invariant_under_strictly_increasing_transform():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 3, size=30)
    labels[:3] = [0, 1, 2]
    scores = rng.standard_normal((30, 3))
    base = macro_ovr_auc(pooled(labels, scores))
    transformed = scores.copy()
    transformed[:, 1] = np.exp(scores[:, 1])  # monotone on one class column
    assert macro_ovr_auc(pooled(labels, transformed)) == base


def test_binary_auc_complement_symmetry():
    rng = np.random.default_rng(5)
    scores = rng.choice([0.1, 0.2, 0.2, 0.9], size=40)
    positive = rng.random(40) < 0.4
    positive[:2] = [True, False]
    a = binary_auc_midrank(scores, positive)
    b = binary_auc_midrank(-scores, positive)
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_metrics_invariant_to_row_permutation():
    rng = np.random.default_rng(11)
    labels = np.array([0] * 6 + [1] * 5 + [2] * 4)
    scores = rng.standard_normal((15, 3))
    p1 = pooled(labels, scores)
    perm = rng.permutation(15)
    p2 = pooled(labels[perm], scores[perm])
    m1, m2 = compute_metrics(p1), compute_metrics(p2)
    assert m1.accuracy == m2.accuracy
    assert m1.macro_f1 == pytest.approx(m2.macro_f1, abs=1e-15)
    assert m1.macro_auc == pytest.approx(m2.macro_auc, abs=1e-12)


def test_accuracy_hand_cases():
    p = pooled([0, 1, 2], np.array([[3, 1, 0], [0, 3, 1], [0, 3, 1]], dtype=float))
    assert p.predicted.tolist() == [0, 1, 1]
    assert accuracy(p) == pytest.approx(2.0 / 3.0)

    labels = np.array([0] * 21 + [1] * 9 + [2] * 7)
    scores = np.tile([1.0, 0.0, 0.0], (37, 1))
    p = pooled(labels, scores)
    assert accuracy(p) == pytest.approx(21.0 / 37.0)
    assert accuracy(p) == pytest.approx(0.568, abs=5e-4)


def test_macro_f1_all_predicted_majority():
    labels = np.array([0] * 21 + [1] * 9 + [2] * 7)
    scores = np.tile([1.0, 0.0, 0.0], (37, 1))
    p = pooled(labels, scores)
    # class 0: precision 21/37, recall 1; classes 1, 2: F1 = 0
    f1_class0 = 2 * (21 / 37) * 1.0 / ((21 / 37) + 1.0)
    assert macro_f1(p) == pytest.approx(f1_class0 / 3.0, abs=1e-12)


def test_macro_f1_three_row_hand_case():
    p = pooled([0, 1, 2], np.array([[3, 1, 0], [1, 3, 0], [1, 3, 0]], dtype=float))
    # predictions (0, 1, 1): class0 F1=1, class1 F1 = 2*(1/2)*1/(1/2+1) = 2/3, class2 F1=0
    assert macro_f1(p) == pytest.approx((1.0 + 2.0 / 3.0 + 0.0) / 3.0, abs=1e-12)


def test_argmax_tie_goes_to_lowest_class():
    p = pooled([2], np.array([[0.5, 0.5, 0.5]]))
    assert p.predicted.tolist() == [0]


def test_balanced_accuracy_hand_case():
    labels = np.array([0, 0, 0, 1, 2])
    scores = np.zeros((5, 3))
    scores[np.arange(5), [0, 0, 1, 1, 1]] = 1.0
    p = pooled(labels, scores)
    # recalls: 2/3, 1, 0
    assert balanced_accuracy(p) == pytest.approx((2 / 3 + 1.0 + 0.0) / 3.0)


def test_auc_requires_both_sides():
    p = pooled([0, 0, 1], np.zeros((3, 3)))
    with pytest.raises(DataError, match="AUC undefined"):
        macro_ovr_auc(p)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_auc_bounds_property(data):
    n = data.draw(st.integers(4, 30))
    labels = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    if labels.sum() in (0, n):
        labels[0] = 0
        labels[1] = 1
    scores = np.array(
        data.draw(
            st.lists(
                st.floats(-5, 5, allow_nan=False, allow_infinity=False),
                min_size=n,
                max_size=n,
            )
        )
    )
    auc = binary_auc_midrank(scores, labels == 1)
    assert 0.0 <= auc <= 1.0
    assert auc == pytest.approx(brute_force_binary_auc(scores, labels == 1), abs=1e-12)
