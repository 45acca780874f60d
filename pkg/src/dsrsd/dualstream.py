"""Shared/private residual decomposition, shared-space projection, gated fusion.

For each modality the projected base representation ``zt`` is split into

* a shared stream ``s = zt + R_sh(zt)`` (residual correction),
* a private stream ``p = P_pr(zt)``,

then ``h = s @ U.T`` maps the shared stream into the common alignment space.
Two modalities are fused by a per-sample softmax gate over one logit per
modality, ``logit_m = h_m . w_m``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .diffengine import Tensor
from .encoders import MlpEncoderParams, ModalityProjection, mlp_forward, project
from .errors import ShapeError


@dataclass
class StreamHeads:
    """Decomposition heads for one modality; never shared across modalities."""

    shared: MlpEncoderParams
    private: MlpEncoderParams
    U: ModalityProjection

    def __post_init__(self):
        d = self.U.dim
        for name, mlp in (("shared", self.shared), ("private", self.private)):
            if mlp.input_dim != d or mlp.output_dim != d:
                raise ShapeError(f"StreamHeads.{name}", (mlp.input_dim, mlp.output_dim), (d, d))

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "StreamHeads":
        # zero-initialised last shared layer: s == zt at step 0
        shared = MlpEncoderParams.init(d, hidden, d, 2, rng, zero_last=True)
        private = MlpEncoderParams.init(d, hidden, d, 2, rng)
        return cls(shared, private, ModalityProjection.identity(d))

    @property
    def dim(self) -> int:
        return self.U.dim

    def param_slots(self, prefix: str):
        yield from self.shared.param_slots(f"{prefix}.shared")
        yield from self.private.param_slots(f"{prefix}.private")
        yield f"{prefix}.U", self.U, "W"


@dataclass
class GateParams:
    w_A: Tensor  # d x 1
    w_B: Tensor  # d x 1

    def __post_init__(self):
        if self.w_A.shape != self.w_B.shape or self.w_A.cols != 1:
            raise ShapeError("GateParams", self.w_A.shape, self.w_B.shape)

    @classmethod
    def zeros(cls, d: int) -> "GateParams":
        return cls(Tensor(np.zeros((d, 1)), requires_grad=True),
                   Tensor(np.zeros((d, 1)), requires_grad=True))

    @classmethod
    def from_vectors(cls, w_A, w_B) -> "GateParams":
        return cls(Tensor(np.asarray(w_A, float).reshape(-1, 1), requires_grad=True),
                   Tensor(np.asarray(w_B, float).reshape(-1, 1), requires_grad=True))

    def param_slots(self, prefix: str):
        yield f"{prefix}.w_A", self, "w_A"
        yield f"{prefix}.w_B", self, "w_B"


@dataclass
class DualStreamOutput:
    s: dict[str, Tensor]
    p: dict[str, Tensor]
    h: dict[str, Tensor]
    u: Tensor
    alpha: Tensor
    u_aug: Tensor | None = None
    extras: dict = field(default_factory=dict)


def decompose(zt: Tensor, heads: StreamHeads, train_mode: bool = False, dropout_rate: float = 0.0,
              rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    if zt.cols != heads.dim:
        raise ShapeError("decompose", zt.shape, (heads.dim, heads.dim))
    correction = mlp_forward(zt, heads.shared, train_mode, dropout_rate, rng)
    s = ops.add(zt, correction)
    p = mlp_forward(zt, heads.private, train_mode, dropout_rate, rng)
    return s, p


def project_shared(s: Tensor, U) -> Tensor:
    return project(s, U)


def gate_logits(h_A: Tensor, h_B: Tensor, gate: GateParams) -> Tensor:
    if h_A.shape != h_B.shape:
        raise ShapeError("gated_fuse", h_A.shape, h_B.shape)
    if gate.w_A.rows != h_A.cols:
        raise ShapeError("gated_fuse", h_A.shape, gate.w_A.shape)
    return ops.concat_cols([ops.matmul(h_A, gate.w_A), ops.matmul(h_B, gate.w_B)])


def gated_fuse(h_A: Tensor, h_B: Tensor, gate: GateParams) -> tuple[Tensor, Tensor]:
    """Return fused ``u`` (B x d) and gate weights ``alpha`` (B x 2, rows sum to 1)."""
    alpha = ops.softmax_rows(gate_logits(h_A, h_B, gate))
    u = ops.add(ops.row_scale(h_A, ops.slice_cols(alpha, 0, 1)),
                ops.row_scale(h_B, ops.slice_cols(alpha, 1, 2)))
    return u, alpha


def augment(u: Tensor, p_A: Tensor, p_B: Tensor) -> Tensor:
    """Column concatenation [u | p_A | p_B]."""
    if not (u.rows == p_A.rows == p_B.rows):
        raise ShapeError("augment", u.shape, p_A.shape, p_B.shape)
    return ops.concat_cols([u, p_A, p_B])


def dual_stream(zt_A: Tensor, zt_B: Tensor, heads_A: StreamHeads, heads_B: StreamHeads,
                gate: GateParams, train_mode: bool = False, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None, with_augmented: bool = True) -> DualStreamOutput:
    s_A, p_A = decompose(zt_A, heads_A, train_mode, dropout_rate, rng)
    s_B, p_B = decompose(zt_B, heads_B, train_mode, dropout_rate, rng)
    h_A = project_shared(s_A, heads_A.U)
    h_B = project_shared(s_B, heads_B.U)
    u, alpha = gated_fuse(h_A, h_B, gate)
    u_aug = augment(u, p_A, p_B) if with_augmented else None
    return DualStreamOutput({"A": s_A, "B": s_B}, {"A": p_A, "B": p_B}, {"A": h_A, "B": h_B},
                            u, alpha, u_aug)
