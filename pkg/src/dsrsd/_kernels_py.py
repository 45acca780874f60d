"""Numpy implementations of the elementwise/row kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them one-for-one.
"""
import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def positive_rank_sum(sorted_scores, sorted_labels):
    """Sum of mid-ranks (1-based) held by positives; scores must be ascending."""
    s = np.asarray(sorted_scores, dtype=np.float64)
    y = np.asarray(sorted_labels, dtype=np.int64)
    n = s.shape[0]
    if n == 0:
        return 0.0
    # boundaries of tie groups
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    mid = 0.5 * (starts + 1 + ends)
    ranks = np.repeat(mid, ends - starts)
    return float(ranks[y == 1].sum())
