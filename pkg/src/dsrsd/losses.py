"""Objective terms: InfoNCE, residual matching, cross-covariance decorrelation,
shared/private orthogonality, label-smoothed cross-entropy, and their weighted sum."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .diffengine import Tensor
from .errors import BatchSizeError, ConfigError, DataError, NumericalError, ShapeError

log = logging.getLogger(__name__)

COMPONENTS = ("con", "align", "dec", "orth", "task")


@dataclass(frozen=True)
class LossWeights:
    con: float = 1.0
    align: float = 0.5
    dec: float = 0.05
    orth: float = 0.05
    task: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0.0) or not math.isfinite(v):
                raise ConfigError(f"loss weight {k} must be a finite non-negative number, got {v}")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class LossReport:
    con: float
    align: float
    dec: float
    orth: float
    task: float
    total: float
    weights: LossWeights
    dec_skipped: bool = False
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def components(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in COMPONENTS}

    def as_dict(self) -> dict[str, float]:
        d = self.components()
        d["total"] = self.total
        return d


def _check_pair(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def contrastive_loss(H_A: Tensor, H_B: Tensor, tau: float = 0.1, symmetric: bool = False) -> Tensor:
    """InfoNCE over cosine similarities, anchored on modality A (B-anchored term added if symmetric)."""
    _check_pair("contrastive_loss", H_A, H_B)
    if not (tau > 0.0):
        raise ConfigError(f"temperature must be positive, got {tau}")
    B = H_A.rows
    if B < 1:
        raise BatchSizeError("contrastive_loss needs at least one row")
    eye = Tensor(np.eye(B))
    logits = ops.scale(ops.cosine_sim(H_A, H_B), 1.0 / tau)
    loss = ops.scale(ops.sum(ops.mul(ops.log_softmax_rows(logits), eye)), -1.0 / B)
    if symmetric:
        back = ops.scale(ops.sum(ops.mul(ops.log_softmax_rows(ops.transpose(logits)), eye)), -1.0 / B)
        loss = ops.scale(ops.add(loss, back), 0.5)
    return loss


def align_loss(H_A: Tensor, H_B: Tensor) -> Tensor:
    _check_pair("align_loss", H_A, H_B)
    return ops.scale(ops.sum(ops.square(ops.sub(H_A, H_B))), 1.0 / H_A.rows)


def center_columns(H: Tensor) -> Tensor:
    return ops.add_bias(H, ops.scale(ops.mean_cols(H), -1.0))


def cross_covariance(H_A: Tensor, H_B: Tensor) -> Tensor:
    """Unbiased cross-covariance (d x d) of column-centered H_A and H_B."""
    if H_A.rows != H_B.rows:
        raise ShapeError("cross_covariance", H_A.shape, H_B.shape)
    B = H_A.rows
    if B < 2:
        raise BatchSizeError(f"cross_covariance needs a batch of at least 2 rows, got {B}")
    Ha, Hb = center_columns(H_A), center_columns(H_B)
    return ops.scale(ops.matmul(ops.transpose(Ha), Hb), 1.0 / (B - 1))


def decorrelation_loss(C: Tensor) -> Tensor:
    """Sum of squared off-diagonal entries."""
    if C.rows != C.cols:
        raise ShapeError("decorrelation_loss", C.shape)
    mask = Tensor(1.0 - np.eye(C.rows))
    return ops.sum(ops.mul(ops.square(C), mask))


def orthogonality_loss(S_A: Tensor, P_A: Tensor, S_B: Tensor, P_B: Tensor) -> Tensor:
    """Batch mean of squared per-sample inner products <s, p>, summed over both modalities."""
    for a, b in ((S_A, P_A), (S_B, P_B), (S_A, S_B)):
        _check_pair("orthogonality_loss", a, b)
    dots_A = ops.sum_rows(ops.mul(S_A, P_A))
    dots_B = ops.sum_rows(ops.mul(S_B, P_B))
    total = ops.add(ops.sum(ops.square(dots_A)), ops.sum(ops.square(dots_B)))
    return ops.scale(total, 1.0 / S_A.rows)


def smoothed_targets(labels, n_classes: int, smoothing: float) -> np.ndarray:
    labels = np.asarray(labels)
    if n_classes < 2:
        raise ConfigError("task loss needs at least two classes")
    if not (0.0 <= smoothing < 1.0):
        raise ConfigError(f"label smoothing must lie in [0, 1), got {smoothing}")
    if labels.ndim != 1:
        labels = labels.reshape(-1)
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes) | (labels != np.round(labels)))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"label {labels[i]} at row {i} outside [0, {n_classes})")
    T = np.full((labels.shape[0], n_classes), smoothing / (n_classes - 1))
    T[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0 - smoothing
    return T


def task_loss(logits: Tensor, labels, smoothing: float = 0.05) -> Tensor:
    """Mean cross-entropy against one-hot targets smoothed to (1-eps, eps/(C-1))."""
    labels = np.asarray(labels)
    if labels.reshape(-1).shape[0] != logits.rows:
        raise ShapeError("task_loss", logits.shape, labels.shape)
    T = Tensor(smoothed_targets(labels, logits.cols, smoothing))
    return ops.scale(ops.sum(ops.mul(T, ops.log_softmax_rows(logits))), -1.0 / logits.rows)


def total_loss(components: dict, weights: LossWeights) -> LossReport:
    """Weighted sum of the five components.

    ``components`` maps names in COMPONENTS to a scalar Tensor, a float, or None
    (absent, counted as 0).  Terms with weight 0 are left out of the graph.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ConfigError(f"unknown loss components: {sorted(unknown)}")
    values = {}
    for name in COMPONENTS:
        c = components.get(name)
        v = 0.0 if c is None else (c.item() if isinstance(c, Tensor) else float(c))
        if not math.isfinite(v):
            raise NumericalError(f"loss component {name!r} is not finite ({v})")
        values[name] = v

    w = weights.as_dict()
    total_t = None
    total = 0.0
    for name in COMPONENTS:
        lam = w[name]
        if lam == 0.0:
            continue
        total += lam * values[name]
        c = components.get(name)
        if isinstance(c, Tensor):
            term = ops.scale(c, lam)
            total_t = term if total_t is None else ops.add(total_t, term)
        elif c is not None and values[name] != 0.0:
            term = Tensor(lam * values[name])
            total_t = term if total_t is None else ops.add(total_t, term)
    if total_t is None:
        total_t = Tensor(0.0)
    return LossReport(values["con"], values["align"], values["dec"], values["orth"], values["task"],
                      total, weights, tensor=total_t)
