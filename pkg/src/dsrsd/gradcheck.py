"""Finite-difference verification of every primitive and of the composite objective."""
from __future__ import annotations

import numpy as np

from . import ops
from .diffengine import GradCheckReport, Tensor, grad_check
from .losses import (LossWeights, align_loss, contrastive_loss, cross_covariance, decorrelation_loss,
                     orthogonality_loss, task_loss)
from .model import DSRSDNet, ModelConfig


def _weighted(out: Tensor, R: np.ndarray) -> Tensor:
    # random linear functional of the output so the whole Jacobian is exercised
    return ops.sum(ops.mul(out, Tensor(R)))


def _unary(op, shape, low=-2.0, high=2.0):
    def make(rng):
        x = rng.uniform(low, high, size=shape)
        probe = None

        def f(t):
            out = op(t)
            nonlocal probe
            if probe is None:
                probe = np.random.default_rng(1234).standard_normal(out.shape)
            return _weighted(out, probe)
        return f, [x]
    return make


def _binary(op, shape_a, shape_b):
    def make(rng):
        a = rng.uniform(-2, 2, size=shape_a)
        b = rng.uniform(-2, 2, size=shape_b)
        probe = {}

        def f(x, y):
            out = op(x, y)
            R = probe.setdefault("R", np.random.default_rng(4321).standard_normal(out.shape))
            return _weighted(out, R)
        return f, [a, b]
    return make


def _dropout(t):
    return ops.dropout(t, 0.3, np.random.default_rng(7), train=True)


PRIMITIVES = {
    "matmul": _binary(ops.matmul, (3, 4), (4, 2)),
    "transpose": _unary(ops.transpose, (3, 4)),
    "add": _binary(ops.add, (3, 4), (3, 4)),
    "sub": _binary(ops.sub, (3, 4), (3, 4)),
    "mul": _binary(ops.mul, (3, 4), (3, 4)),
    "scale": _unary(lambda t: ops.scale(t, -1.7), (3, 4)),
    "add_bias": _binary(ops.add_bias, (3, 4), (1, 4)),
    "row_scale": _binary(ops.row_scale, (3, 4), (3, 1)),
    "square": _unary(ops.square, (3, 4)),
    "sum": _unary(ops.sum, (3, 4)),
    "mean": _unary(ops.mean, (3, 4)),
    "sum_rows": _unary(ops.sum_rows, (3, 4)),
    "mean_cols": _unary(ops.mean_cols, (3, 4)),
    "softmax_rows": _unary(ops.softmax_rows, (3, 4)),
    "log_softmax_rows": _unary(ops.log_softmax_rows, (3, 4)),
    "gelu": _unary(ops.gelu, (3, 4)),
    "dropout": _unary(_dropout, (3, 4)),
    "row_l2norm": _unary(ops.row_l2norm, (3, 4)),
    "cosine_sim": _binary(ops.cosine_sim, (3, 4), (5, 4)),
    "log": _unary(ops.log, (3, 4), 0.5, 2.0),
    "exp": _unary(ops.exp, (3, 4)),
    "concat_cols": _binary(lambda a, b: ops.concat_cols([a, b]), (3, 2), (3, 3)),
    "slice_cols": _unary(lambda t: ops.slice_cols(t, 1, 3), (3, 4)),
}


def _loss_cases(B: int, d: int):
    def con(rng):
        return (lambda a, b: contrastive_loss(a, b, tau=0.1)), [rng.uniform(-2, 2, (B, d)) for _ in range(2)]

    def align(rng):
        return align_loss, [rng.uniform(-2, 2, (B, d)) for _ in range(2)]

    def dec(rng):
        return (lambda a, b: decorrelation_loss(cross_covariance(a, b))), [rng.uniform(-2, 2, (B, d)) for _ in range(2)]

    def orth(rng):
        return orthogonality_loss, [rng.uniform(-2, 2, (B, d)) for _ in range(4)]

    def task(rng):
        labels = rng.integers(0, 3, B)
        return (lambda z: task_loss(z, labels, 0.05)), [rng.uniform(-2, 2, (B, 3))]

    return {"loss.contrastive": con, "loss.align": align, "loss.decorrelation": dec,
            "loss.orthogonality": orth, "loss.task": task}


def composite_case(B: int = 8, d: int = 6, seed: int = 0, perturb: float = 0.0,
                   weights: LossWeights | None = None):
    """(f, point) for the weighted total objective of a small model w.r.t. all its parameters."""
    rng = np.random.default_rng(seed)
    weights = weights or LossWeights()
    model = DSRSDNet(ModelConfig(dim_a=5, dim_b=4, d=d, enc_hidden=8, head_hidden=8), seed=seed)
    x_a = rng.uniform(-2, 2, (B, 5))
    x_b = rng.uniform(-2, 2, (B, 4))
    labels = rng.integers(0, 2, B)
    point = [p.data + perturb * rng.standard_normal(p.shape) for p in model.parameters()]

    def f(*ts):
        model.bind_parameters(ts)
        out = model.forward(x_a, x_b, train=True, rng=np.random.default_rng(99), dropout=0.2)
        return model.compute_losses(out, labels, weights, tau=0.1, smoothing=0.05).tensor

    return f, point


def run_suite(n_seeds: int = 20, B: int = 8, d: int = 6, eps: float = 1e-5, tol: float = 1e-4,
              composite_seeds: int = 3) -> list[GradCheckReport]:
    reports = []
    for name, make in PRIMITIVES.items():
        worst = None
        for s in range(n_seeds):
            f, point = make(np.random.default_rng(s))
            r = grad_check(f, point, eps, tol, label=f"primitive.{name}")
            if worst is None or r.max_rel_error > worst.max_rel_error:
                worst = r
        worst.details["seeds"] = n_seeds
        reports.append(worst)
    for name, make in _loss_cases(B, d).items():
        worst = None
        for s in range(n_seeds):
            f, point = make(np.random.default_rng(s))
            r = grad_check(f, point, eps, tol, label=name)
            if worst is None or r.max_rel_error > worst.max_rel_error:
                worst = r
        worst.details["seeds"] = n_seeds
        reports.append(worst)
    for s in range(composite_seeds):
        # seed 0 at the raw initialisation, later seeds with all parameters jittered
        f, point = composite_case(B, d, seed=s, perturb=0.0 if s == 0 else 0.1)
        r = grad_check(f, point, eps, tol, label=f"composite.total_loss[seed={s}]")
        reports.append(r)
    return reports
