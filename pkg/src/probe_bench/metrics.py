"""Pooled-prediction metrics: accuracy, macro F1, macro one-vs-rest AUC.

The AUC is the primary ranking statistic.  It is computed with the
Mann-Whitney midrank formula, which counts a tied positive/negative score
pair as half a win, and is averaged unweighted over the K one-vs-rest
problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PooledPredictions:
    """Per-specimen scores pooled over evaluation folds.

    predicted is the argmax of scores per row, lowest class index winning
    ties.
    """

    ids: tuple[str, ...]
    labels: np.ndarray  # (n,) int64
    scores: np.ndarray  # (n, K) float64

    def __post_init__(self):
        if self.scores.ndim != 2 or self.scores.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"scores shape {self.scores.shape} does not match {self.labels.shape[0]} labels"
            )
        if len(self.ids) != self.labels.shape[0]:
            raise DataError("ids and labels length mismatch")

    @property
    def n_classes(self) -> int:
        return int(self.scores.shape[1])

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.scores, axis=1)


@dataclass(frozen=True)
class MetricBundle:
    accuracy: float
    macro_f1: float
    macro_auc: float


def accuracy(pooled: PooledPredictions) -> float:
    """Fraction of rows whose argmax score hits the true label."""
    return float(np.mean(pooled.predicted == pooled.labels))


def balanced_accuracy(pooled: PooledPredictions) -> float:
    """Unweighted mean of per-class recalls."""
    pred = pooled.predicted
    recalls = []
    for k in range(pooled.n_classes):
        mask = pooled.labels == k
        if not mask.any():
            raise DataError(f"balanced accuracy undefined: class {k} absent from labels")
        recalls.append(float(np.mean(pred[mask] == k)))
    return float(np.mean(recalls))


def macro_f1(pooled: PooledPredictions) -> float:
    """Unweighted mean of per-class F1; a class with no predictions and no
    members, or zero precision+recall, contributes 0."""
    pred = pooled.predicted
    labels = pooled.labels
    f1s = []
    for k in range(pooled.n_classes):
        tp = float(np.sum((pred == k) & (labels == k)))
        fp = float(np.sum((pred == k) & (labels != k)))
        fn = float(np.sum((pred != k) & (labels == k)))
        denom = 2.0 * tp + fp + fn
        f1s.append(0.0 if denom == 0.0 else 2.0 * tp / denom)
    return float(np.mean(f1s))


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # positions i..j (0-based) share rank mean of (i+1 .. j+1)
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc_midrank(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC of scores for the given boolean positive mask."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: need at least one positive and one negative")
    ranks = midranks(scores)
    rank_sum = float(ranks[positive].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def macro_ovr_auc(pooled: PooledPredictions) -> float:
    """Unweighted mean of the K one-vs-rest midrank AUCs."""
    aucs = []
    for k in range(pooled.n_classes):
        pos = pooled.labels == k
        if not pos.any() or pos.all():
            raise DataError(
                f"macro AUC undefined: class {k} needs at least one positive and one negative"
            )
        aucs.append(binary_auc_midrank(pooled.scores[:, k], pos))
    return float(np.mean(aucs))


def compute_metrics(pooled: PooledPredictions) -> MetricBundle:
    return MetricBundle(
        accuracy=accuracy(pooled),
        macro_f1=macro_f1(pooled),
        macro_auc=macro_ovr_auc(pooled),
    )
