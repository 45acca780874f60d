"""Full bimodal network: encoders, projections, dual-stream heads, gate, classifier.

``backbone=True`` builds the late-fusion baseline: projected base
representations of both modalities are concatenated and fed straight to the
classifier, with no decomposition, gate, or auxiliary losses.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .diffengine import Tensor
from .dualstream import DualStreamOutput, GateParams, StreamHeads, dual_stream
from .encoders import Linear, MlpEncoderParams, ModalityProjection, encode, project
from .errors import BatchSizeError, ConfigError
from .losses import (LossReport, LossWeights, align_loss, contrastive_loss, cross_covariance,
                     decorrelation_loss, orthogonality_loss, task_loss, total_loss)

log = logging.getLogger(__name__)

MODALITIES = ("A", "B")


@dataclass(frozen=True)
class ModelConfig:
    dim_a: int
    dim_b: int
    d: int = 32
    enc_hidden: int = 128
    enc_layers: int = 2
    head_hidden: int = 128
    n_classes: int = 2
    use_private_in_head: bool = True
    backbone: bool = False

    def __post_init__(self):
        for k in ("dim_a", "dim_b", "d", "enc_hidden", "enc_layers", "head_hidden"):
            if getattr(self, k) < 1:
                raise ConfigError(f"model.{k} must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("model.n_classes must be >= 2")

    def as_dict(self):
        return asdict(self)

    @property
    def head_input_dim(self) -> int:
        if self.backbone:
            return 2 * self.d
        return 3 * self.d if self.use_private_in_head else self.d


@dataclass
class ModelOutput:
    z_tilde: dict
    logits: Tensor
    stream: DualStreamOutput | None = None


class DSRSDNet:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.encoders = {
            "A": MlpEncoderParams.init(c.dim_a, c.enc_hidden, c.d, c.enc_layers, rng),
            "B": MlpEncoderParams.init(c.dim_b, c.enc_hidden, c.d, c.enc_layers, rng),
        }
        self.projections = {m: ModalityProjection.identity(c.d) for m in MODALITIES}
        if c.backbone:
            self.heads = None
            self.gate = None
        else:
            self.heads = {m: StreamHeads.init(c.d, c.head_hidden, rng) for m in MODALITIES}
            self.gate = GateParams.zeros(c.d)
        self.classifier = Linear.init(c.head_input_dim, c.n_classes, rng)

    # parameters ---------------------------------------------------------
    def param_slots(self):
        """(name, owner, attribute) for every parameter, in a fixed order."""
        for m in MODALITIES:
            yield from self.encoders[m].param_slots(f"encoder_{m}")
        for m in MODALITIES:
            yield f"proj_{m}.W", self.projections[m], "W"
        if self.heads is not None:
            for m in MODALITIES:
                yield from self.heads[m].param_slots(f"heads_{m}")
            yield from self.gate.param_slots("gate")
        yield from self.classifier.param_slots("classifier")

    def named_parameters(self):
        for name, owner, attr in self.param_slots():
            yield name, getattr(owner, attr)

    def bind_parameters(self, tensors) -> None:
        """Swap in new parameter tensor objects (same order as ``parameters()``)."""
        slots = list(self.param_slots())
        tensors = list(tensors)
        if len(tensors) != len(slots):
            raise ConfigError(f"expected {len(slots)} tensors, got {len(tensors)}")
        for (name, owner, attr), t in zip(slots, tensors):
            if t.shape != getattr(owner, attr).shape:
                raise ConfigError(f"parameter {name}: shape {t.shape} != {getattr(owner, attr).shape}")
            setattr(owner, attr, t)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {k}: shape {arr.shape} != {p.shape}")
            p.assign(arr)

    # forward --------------------------------------------------------------
    def forward(self, x_A, x_B, mask_A=None, mask_B=None, train: bool = False,
                rng: np.random.Generator | None = None, dropout: float = 0.0) -> ModelOutput:
        xs = {"A": np.asarray(x_A, dtype=np.float64), "B": np.asarray(x_B, dtype=np.float64)}
        masks = {"A": mask_A, "B": mask_B}
        zt = {}
        for m in MODALITIES:
            x = xs[m]
            if masks[m] is not None:
                x = np.where(np.asarray(masks[m], dtype=bool)[:, None], x, 0.0)
            z = encode(x, self.encoders[m], train, dropout, rng, modality=m)
            zt[m] = project(z, self.projections[m])
        if self.config.backbone:
            logits = self.classifier(ops.concat_cols([zt["A"], zt["B"]]))
            return ModelOutput(zt, logits)
        out = dual_stream(zt["A"], zt["B"], self.heads["A"], self.heads["B"], self.gate,
                          train, dropout, rng, with_augmented=self.config.use_private_in_head)
        head_in = out.u_aug if self.config.use_private_in_head else out.u
        return ModelOutput(zt, self.classifier(head_in), out)

    __call__ = forward

    def predict_proba(self, x_A, x_B, mask_A=None, mask_B=None, batch_size: int = 256) -> np.ndarray:
        """Class probabilities (N x C) in eval mode."""
        n = len(x_A)
        chunks = []
        for lo in range(0, n, batch_size):
            sl = slice(lo, lo + batch_size)
            out = self.forward(x_A[sl], x_B[sl],
                               None if mask_A is None else mask_A[sl],
                               None if mask_B is None else mask_B[sl])
            chunks.append(ops.softmax_rows(out.logits).data)
        if not chunks:
            return np.zeros((0, self.config.n_classes))
        return np.vstack(chunks)

    def compute_losses(self, out: ModelOutput, labels, weights: LossWeights, tau: float = 0.1,
                       smoothing: float = 0.05, symmetric_infonce: bool = False) -> LossReport:
        comps = {"task": task_loss(out.logits, labels, smoothing)}
        dec_skipped = False
        st = out.stream
        if st is not None:
            h_A, h_B = st.h["A"], st.h["B"]
            # zero-weight terms are still evaluated for reporting; total_loss keeps them off the graph
            comps["con"] = contrastive_loss(h_A, h_B, tau, symmetric_infonce)
            comps["align"] = align_loss(h_A, h_B)
            try:
                comps["dec"] = decorrelation_loss(cross_covariance(h_A, h_B))
            except BatchSizeError:
                dec_skipped = True
                log.warning("batch of %d rows: decorrelation term skipped", h_A.rows)
            comps["orth"] = orthogonality_loss(st.s["A"], st.p["A"], st.s["B"], st.p["B"])
        report = total_loss(comps, weights)
        report.dec_skipped = dec_skipped
        return report
