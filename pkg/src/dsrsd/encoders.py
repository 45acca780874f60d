"""Per-modality MLP encoders and the square scale-normalizing projections."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .diffengine import Tensor
from .errors import ConfigError, DataError, ShapeError


@dataclass
class Linear:
    """Affine map ``x @ weight.T + bias``; weight is stored (out, in)."""

    weight: Tensor
    bias: Tensor | None

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True,
             zero: bool = False) -> "Linear":
        bound = 1.0 / np.sqrt(in_dim)
        if zero:
            w = np.zeros((out_dim, in_dim))
        else:
            w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=(1, out_dim)) if bias and not zero else np.zeros((1, out_dim))
        return cls(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True) if bias else None)

    @property
    def in_dim(self) -> int:
        return self.weight.cols

    @property
    def out_dim(self) -> int:
        return self.weight.rows

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def param_slots(self, prefix: str):
        yield f"{prefix}.weight", self, "weight"
        if self.bias is not None:
            yield f"{prefix}.bias", self, "bias"

    def named_parameters(self, prefix: str):
        for name, owner, attr in self.param_slots(prefix):
            yield name, getattr(owner, attr)


@dataclass
class MlpEncoderParams:
    """Stack of linear layers; GELU (and dropout in training) between them, none after the last."""

    layers: list[Linear]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("encoder needs at least one layer")
        for k in range(len(self.layers) - 1):
            if self.layers[k].out_dim != self.layers[k + 1].in_dim:
                raise ConfigError(
                    f"encoder layer {k} outputs {self.layers[k].out_dim} but layer {k + 1} "
                    f"expects {self.layers[k + 1].in_dim}")

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, output_dim: int, n_layers: int,
             rng: np.random.Generator, zero_last: bool = False) -> "MlpEncoderParams":
        if n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        dims = [input_dim] + [hidden_dim] * (n_layers - 1) + [output_dim]
        layers = [Linear.init(dims[k], dims[k + 1], rng, zero=zero_last and k == n_layers - 1)
                  for k in range(n_layers)]
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def param_slots(self, prefix: str):
        for k, layer in enumerate(self.layers):
            yield from layer.param_slots(f"{prefix}.{k}")

    def named_parameters(self, prefix: str):
        for name, owner, attr in self.param_slots(prefix):
            yield name, getattr(owner, attr)


def mlp_forward(x: Tensor, params: MlpEncoderParams, train_mode: bool = False,
                dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    h = x
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        h = layer(h)
        if k < last:
            h = ops.gelu(h)
            h = ops.dropout(h, dropout_rate, rng, train=train_mode)
    return h


def encode(x, params: MlpEncoderParams, train_mode: bool = False, dropout_rate: float = 0.0,
           rng: np.random.Generator | None = None, modality: str = "?") -> Tensor:
    """Base representation z (B x d) of one modality's feature matrix."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.cols != params.input_dim:
        raise ConfigError(
            f"modality {modality}: features have {x.cols} columns, encoder expects {params.input_dim}")
    return mlp_forward(x, params, train_mode, dropout_rate, rng)


@dataclass
class ModalityProjection:
    W: Tensor

    def __post_init__(self):
        if self.W.rows != self.W.cols:
            raise ShapeError("ModalityProjection", self.W.shape)

    @classmethod
    def identity(cls, d: int) -> "ModalityProjection":
        return cls(Tensor(np.eye(d), requires_grad=True))

    @property
    def dim(self) -> int:
        return self.W.rows


def project(z: Tensor, proj) -> Tensor:
    """z @ W.T (row-vector form of W z); accepts a ModalityProjection or a bare matrix tensor."""
    W = proj.W if isinstance(proj, ModalityProjection) else proj
    if z.cols != W.cols:
        raise ShapeError("project", z.shape, W.shape)
    return ops.matmul(z, ops.transpose(W))


def masked_mean_pool(x_seq, mask) -> np.ndarray:
    """Mean over valid time steps of a (B, T, D) array; padded steps contribute exactly nothing."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x_seq.ndim != 3 or mask.shape != x_seq.shape[:2]:
        raise ShapeError("seq_encode", x_seq.shape, mask.shape)
    counts = mask.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"seq_encode: sample {int(empty[0])} has no valid time steps")
    acc = np.zeros((x_seq.shape[0], x_seq.shape[2]))
    # sequential accumulation so appended masked steps add exact zeros
    for t in range(x_seq.shape[1]):
        acc += np.where(mask[:, t, None], x_seq[:, t, :], 0.0)
    return acc / counts[:, None]


def seq_encode(x_seq, mask, params: MlpEncoderParams, train_mode: bool = False,
               dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
               modality: str = "?") -> Tensor:
    pooled = masked_mean_pool(x_seq, mask)
    return encode(pooled, params, train_mode, dropout_rate, rng, modality)
