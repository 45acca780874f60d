"""Reverse-mode differentiation over dense 2-D float64 matrices.

Operations are recorded on the innermost active :class:`Graph`.  Outside a
graph every op is a plain numpy computation and nothing is tracked, so model
evaluation needs no special mode::

    with Graph() as g:
        loss = ops.sum(ops.square(x))
    grads = backward(g, loss)

Samples are rows throughout.  A graph is consumed by :func:`backward`; calling
it twice raises :class:`GraphError`.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, GraphError, NumericalError, ShapeError

__all__ = [
    "Tensor", "Graph", "Node", "backward", "grad_check", "GradCheckReport",
    "constant", "active_graph",
]


class Tensor:
    """A 2-D float64 matrix with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError("Tensor", arr.shape)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.is_leaf = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError("item", self.data.shape)
        return float(self.data[0, 0])

    def assign(self, values) -> None:
        """Replace the values of a leaf (used by optimizers and checkpoint loading)."""
        arr = np.array(values, dtype=np.float64).reshape(self.data.shape)
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all routes end in ops primitives.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other, self.shape), self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(id(t) for t in self.inputs)

    @property
    def output_id(self) -> int:
        return id(self.output)


_state = threading.local()


def _stack() -> list:
    s = getattr(_state, "stack", None)
    if s is None:
        s = _state.stack = []
    return s


def active_graph() -> "Graph | None":
    s = _stack()
    return s[-1] if s else None


class Graph:
    """Tape of recorded nodes in construction (hence topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Graph":
        if self.consumed:
            raise GraphError("graph already consumed by backward")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if s and s[-1] is self:
            s.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, kind, inputs, output, backward_fn) -> None:
        if self.consumed:
            raise GraphError("cannot record on a consumed graph")
        self.nodes.append(Node(kind, tuple(inputs), output, backward_fn))


def _emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out`` and record it if any input is tracked."""
    t = Tensor._wrap(out)
    g = active_graph()
    if g is not None and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        g.record(kind, inputs, t, backward_fn)
    return t


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through ``graph``; return {leaf: grad} and set ``leaf.grad``.

    Leaves that require grad but do not influence ``loss`` receive zeros.
    """
    if graph.consumed:
        raise GraphError("backward already ran on this graph")
    if loss.shape != (1, 1):
        raise GraphError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    adj: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[int, Tensor] = {}
    if loss.is_leaf:
        leaves[id(loss)] = loss
    for node in graph.nodes:
        for inp in node.inputs:
            if inp.is_leaf and inp.requires_grad:
                leaves.setdefault(id(inp), inp)

    # non-leaf adjoints are popped as soon as their producer is processed
    for node in reversed(graph.nodes):
        g_out = adj.pop(id(node.output), None)
        if g_out is None:
            continue
        grads = node.backward(g_out)
        for inp, g_in in zip(node.inputs, grads):
            if g_in is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = adj.get(key)
            adj[key] = g_in if prev is None else prev + g_in

    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = adj.get(key)
        if g is None:
            g = np.zeros(leaf.shape)
        g = np.array(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g
        result[leaf] = g

    graph.nodes = []
    graph.consumed = True
    return result


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    passed: bool
    n_checked: int
    worst: tuple[int, int, int] | None = None
    label: str = ""
    details: dict = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.label or 'grad_check'}: max rel err {self.max_rel_error:.3e} "
                f"(abs {self.max_abs_error:.3e}, tol {self.tol:g}, {self.n_checked} entries)")


def grad_check(f: Callable[..., Tensor], point: Sequence, eps: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-3, label: str = "") -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*point)`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    near-zero gradients from turning rounding noise into huge ratios.  ``f`` must
    be deterministic (seed any RNG inside it).
    """
    if eps <= 0:
        raise ConfigError("grad_check: eps must be positive")
    base = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in point]
    base = [b.reshape(1, 1) if b.ndim == 0 else (b.reshape(1, -1) if b.ndim == 1 else b) for b in base]

    leaves = [Tensor(b, requires_grad=True) for b in base]
    with Graph() as g:
        out = f(*leaves)
    if out.shape != (1, 1):
        raise GraphError(f"grad_check: f must return a scalar, got {out.shape}")
    if out.requires_grad:
        analytic = backward(g, out)
        an = [analytic[t] for t in leaves]
    else:
        an = [np.zeros_like(b) for b in base]

    def value(arrs):
        return f(*[Tensor(a) for a in arrs]).item()

    max_rel = 0.0
    max_abs = 0.0
    worst = None
    n = 0
    for k, b in enumerate(base):
        for idx in np.ndindex(b.shape):
            plus = [x.copy() for x in base]
            minus = [x.copy() for x in base]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            num = (value(plus) - value(minus)) / (2.0 * eps)
            a = an[k][idx]
            abs_err = abs(a - num)
            rel = abs_err / max(abs(a), abs(num), floor)
            if not np.isfinite(rel):
                rel = np.inf
            n += 1
            max_abs = max(max_abs, abs_err)
            if worst is None or rel > max_rel:
                max_rel = rel
                worst = (k, *idx)
    return GradCheckReport(max_rel, max_abs, tol, bool(max_rel < tol), n, worst, label)


def check_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values in {what}")


# imported late so ``ops`` can use _emit
from . import ops  # noqa: E402,F401
