"""Binary classification metrics: ROC AUC by rank sum, accuracy, positive-class F1."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import MetricError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricSet:
    auc: float
    acc: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels).reshape(-1)
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be binary (0/1)")
    return y.astype(np.int64)


def auc(scores, labels) -> float:
    """P(score of random positive > score of random negative), ties counted 1/2.

    Mann-Whitney U from mid-ranks: U = R_pos - P(P+1)/2, AUC = U / (P N).
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary(labels)
    if s.shape != y.shape:
        raise MetricError(f"scores ({s.shape[0]}) and labels ({y.shape[0]}) differ in length")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores contain NaN or Inf")
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")
    order = np.argsort(s, kind="mergesort")
    rank_sum = kernels.positive_rank_sum(s[order], y[order])
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy_f1(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """Accuracy and positive-class F1 with prediction ``score >= threshold``.

    F1 is 0 (with a warning) when nothing is predicted positive.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if s.size == 0:
        raise MetricError("no samples")
    pred = (s >= threshold).astype(np.int64)
    acc = float(np.mean(pred == y))
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    if tp + fp == 0:
        log.warning("no positive predictions; F1 set to 0")
        return acc, 0.0
    if tp == 0:
        return acc, 0.0
    return acc, float(2 * tp / (2 * tp + fp + fn))


def metric_set(scores, labels, threshold: float = 0.5) -> MetricSet:
    acc, f1 = accuracy_f1(scores, labels, threshold)
    return MetricSet(auc(scores, labels), acc, f1)
