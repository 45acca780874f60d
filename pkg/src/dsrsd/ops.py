"""Differentiable primitives.

Each function computes its output with numpy (or the compiled kernels) and
hands a closure for the vector-Jacobian product to the active graph.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .diffengine import Tensor, _emit
from .errors import ConfigError, NumericalError, ShapeError


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data
    return _emit("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.data.T, lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B, lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1 x cols row vector to every row of ``x``."""
    if b.shape != (1, x.cols):
        raise ShapeError("add_bias", x.shape, b.shape)
    return _emit("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=0, keepdims=True)))


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by the scalar ``s[i, 0]``."""
    if s.shape != (x.rows, 1):
        raise ShapeError("row_scale", x.shape, s.shape)
    X, S = x.data, s.data
    return _emit("row_scale", (x, s), X * S,
                 lambda g: (g * S, (g * X).sum(axis=1, keepdims=True)))


def square(x: Tensor) -> Tensor:
    X = x.data
    return _emit("square", (x,), X * X, lambda g: (2.0 * X * g,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _emit("sum", (x,), np.array([[x.data.sum()]]), lambda g: (np.full(shape, g[0, 0]),))


def mean(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.data.size
    if n == 0:
        raise ShapeError("mean", shape)
    return _emit("mean", (x,), np.array([[x.data.mean()]]),
                 lambda g: (np.full(shape, g[0, 0] / n),))


def sum_rows(x: Tensor) -> Tensor:
    """Per-row sum: rows x 1."""
    cols = x.cols
    return _emit("sum_rows", (x,), x.data.sum(axis=1, keepdims=True),
                 lambda g: (np.repeat(g, cols, axis=1),))


def mean_cols(x: Tensor) -> Tensor:
    """Column means: 1 x cols."""
    rows = x.rows
    if rows == 0:
        raise ShapeError("mean_cols", x.shape)
    return _emit("mean_cols", (x,), x.data.mean(axis=0, keepdims=True),
                 lambda g: (np.repeat(g / rows, rows, axis=0),))


def softmax_rows(x: Tensor) -> Tensor:
    Y = kernels.softmax_rows(x.data)

    def vjp(g):
        return (Y * (g - (g * Y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (x,), Y, vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    L = kernels.log_softmax_rows(x.data)

    def vjp(g):
        P = np.exp(L)
        return (g - P * g.sum(axis=1, keepdims=True),)

    return _emit("log_softmax_rows", (x,), L, vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    X = x.data
    return _emit("gelu", (x,), kernels.gelu(X), lambda g: (g * kernels.gelu_grad(X),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout: zero with prob ``rate`` and rescale survivors by 1/(1-rate)."""
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an RNG stream")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def row_l2norm(x: Tensor) -> Tensor:
    X = x.data
    n = np.sqrt((X * X).sum(axis=1, keepdims=True))

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * X / n,)

    return _emit("row_l2norm", (x,), n, vjp)


def _unit_rows(op, X, side):
    n = np.sqrt((X * X).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(n[:, 0] == 0.0)
    if bad.size:
        raise NumericalError(f"{op}: zero-norm row {int(bad[0])} in {side} operand; cosine undefined")
    return X / n, n


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of cosines between rows of ``a`` (n x d) and rows of ``b`` (m x d)."""
    if a.cols != b.cols:
        raise ShapeError("cosine_sim", a.shape, b.shape)
    An, na = _unit_rows("cosine_sim", a.data, "left")
    Bn, nb = _unit_rows("cosine_sim", b.data, "right")
    S = An @ Bn.T

    def vjp(g):
        dA = g @ Bn
        dB = g.T @ An
        ga = (dA - An * (An * dA).sum(axis=1, keepdims=True)) / na
        gb = (dB - Bn * (Bn * dB).sum(axis=1, keepdims=True)) / nb
        return ga, gb

    return _emit("cosine_sim", (a, b), S, vjp)


def log(x: Tensor) -> Tensor:
    X = x.data
    bad = np.argwhere(~(X > 0))
    if bad.size:
        i, j = bad[0]
        raise NumericalError(f"log: non-positive input {X[i, j]!r} at ({i}, {j})")
    return _emit("log", (x,), np.log(X), lambda g: (g / X,))


def exp(x: Tensor) -> Tensor:
    E = np.exp(x.data)
    return _emit("exp", (x,), E, lambda g: (g * E,))


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols")
    rows = parts[0].rows
    for p in parts[1:]:
        if p.rows != rows:
            raise ShapeError("concat_cols", parts[0].shape, p.shape)
    bounds = np.cumsum([0] + [p.cols for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_cols", parts, out, vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= x.cols):
        raise ShapeError("slice_cols", x.shape, (start, stop))
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", (x,), x.data[:, start:stop], vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T (+ bias)`` with ``weight`` stored as (out, in)."""
    if weight.cols != x.cols:
        raise ShapeError("linear", x.shape, weight.shape)
    y = matmul(x, transpose(weight))
    if bias is not None:
        y = add_bias(y, bias)
    return y
