"""End-to-end optimisation: AdamW, warm-up + cosine schedule, global-norm
clipping, ramped regulariser weights, early stopping on validation AUC."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import MultimodalDataset, batch_indices
from .diffengine import Graph, backward
from .errors import ConfigError, NumericalError
from .losses import COMPONENTS, LossWeights
from .metrics import MetricSet, metric_set
from .model import DSRSDNet, ModelConfig

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_ABORTS = 3


@dataclass(frozen=True)
class TrainConfig:
    # architecture
    d: int = 32
    enc_hidden: int = 128
    enc_layers: int = 2
    head_hidden: int = 128
    use_private_in_head: bool = True
    backbone: bool = False
    # optimisation
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    warmup_fraction: float = 0.05
    lr: float = 1e-4
    min_lr: float = 0.0
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    dropout: float = 0.2
    smoothing: float = 0.05
    # objective
    lambda_con: float = 1.0
    lambda_align: float = 0.5
    lambda_dec: float = 0.05
    lambda_orth: float = 0.05
    lambda_task: float = 1.0
    ramp_epochs: int = 5
    ramp_start: float = 0.1
    tau: float = 0.1
    symmetric_infonce: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("train.patience must be >= 1")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ConfigError("train.warmup_fraction must lie in [0, 1)")
        if not (self.clip_norm > 0):
            raise ConfigError("train.clip_norm must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("train.batch_size and train.max_epochs must be >= 1")
        if self.lr < 0 or self.min_lr < 0 or self.min_lr > self.lr:
            raise ConfigError("need 0 <= train.min_lr <= train.lr")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("train.dropout must lie in [0, 1)")
        if not (0.0 <= self.smoothing < 1.0):
            raise ConfigError("train.smoothing must lie in [0, 1)")
        if self.ramp_epochs < 0 or not (0.0 <= self.ramp_start <= 1.0):
            raise ConfigError("train.ramp_epochs must be >= 0 and train.ramp_start in [0, 1]")
        if not (self.tau > 0):
            raise ConfigError("train.tau must be > 0")
        self.target_weights()  # validates the lambdas

    def target_weights(self) -> LossWeights:
        return LossWeights(self.lambda_con, self.lambda_align, self.lambda_dec, self.lambda_orth,
                           self.lambda_task)

    def model_config(self, dim_a: int, dim_b: int, n_classes: int = 2) -> ModelConfig:
        return ModelConfig(dim_a, dim_b, self.d, self.enc_hidden, self.enc_layers, self.head_hidden,
                           n_classes, self.use_private_in_head, self.backbone)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def build_model(config: TrainConfig, dataset: MultimodalDataset) -> DSRSDNet:
    return DSRSDNet(config.model_config(dataset.dim_a, dataset.dim_b, dataset.n_classes), seed=config.seed)


# --- schedule pieces -----------------------------------------------------------

def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Linear warm-up 0 -> base_lr, then cosine decay base_lr -> min_lr at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    decay = total_steps - warmup_steps
    if decay <= 0:
        return base_lr
    progress = min(max((step - warmup_steps) / decay, 0.0), 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


def lambda_schedule(epoch: int, config: TrainConfig) -> LossWeights:
    """Hold con/align/task; ramp dec/orth linearly from ``ramp_start`` of target to target."""
    target = config.target_weights()
    if config.ramp_epochs == 0 or epoch >= config.ramp_epochs:
        return target
    frac = config.ramp_start + (1.0 - config.ramp_start) * epoch / config.ramp_epochs
    return LossWeights(target.con, target.align, target.dec * frac, target.orth * frac, target.task)


class NonFiniteGradient(NumericalError):
    pass


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_gradients(grads, max_norm: float):
    """Scale all gradients by max_norm/g when their global L2 norm g exceeds max_norm.

    Returns (grads, g).  Raises NonFiniteGradient if any entry is NaN/Inf.
    """
    if not (max_norm > 0):
        raise ConfigError("max_norm must be > 0")
    g = global_norm(grads)
    if not math.isfinite(g):
        raise NonFiniteGradient(f"non-finite gradient norm ({g})")
    if g > max_norm:
        factor = max_norm / g
        return [x * factor for x in grads], g
    return list(grads), g


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    base_lr: float = 1e-4

    @classmethod
    def for_params(cls, params, **kw) -> "OptimizerState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **kw)


def adamw_step(params, grads, state: OptimizerState, lr: float) -> None:
    """One AdamW update in place: decoupled decay then bias-corrected Adam step."""
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    if not (len(params) == len(grads) == len(state.m)):
        raise ConfigError("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ConfigError(f"parameter {k}: shape {p.shape} vs grad {g.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        state.m[k] = m
        state.v[k] = v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.assign(p.data * (1.0 - lr * state.weight_decay) - lr * update)


# --- training loop ---------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    grad_norm: float
    clipped_norm: float
    skipped: bool = False


@dataclass
class EpochRecord:
    epoch: int
    losses: dict
    val: MetricSet
    lr: float
    weights: LossWeights

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "losses": self.losses, "val": self.val.as_dict(),
                "lr": self.lr, "lambda": self.weights.as_dict()}


@dataclass
class FitResult:
    model: DSRSDNet
    history: list[EpochRecord]
    steps: list[StepRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    seconds_per_epoch: float = float("nan")

    @property
    def best_val_auc(self) -> float:
        return self.history[self.best_epoch].val.auc


def evaluate_model(model: DSRSDNet, ds: MultimodalDataset, batch_size: int = 256) -> MetricSet:
    probs = model.predict_proba(ds.inputs_a, ds.inputs_b, ds.mask_a, ds.mask_b, batch_size)
    return metric_set(probs[:, 1], ds.labels)


def train_step(model: DSRSDNet, batch: MultimodalDataset, weights: LossWeights, config: TrainConfig,
               rng: np.random.Generator):
    """Forward + backward on one batch; returns (LossReport, grads aligned with model.parameters())."""
    params = model.parameters()
    with Graph() as g:
        out = model.forward(batch.inputs_a, batch.inputs_b, batch.mask_a, batch.mask_b,
                            train=True, rng=rng, dropout=config.dropout)
        report = model.compute_losses(out, batch.labels, weights, config.tau, config.smoothing,
                                      config.symmetric_infonce)
    if not report.tensor.requires_grad:
        return report, [np.zeros(p.shape) for p in params]
    grads = backward(g, report.tensor)
    return report, [grads[p] for p in params]


def fit(model: DSRSDNet, train: MultimodalDataset, val: MultimodalDataset, config: TrainConfig,
        log_path=None) -> FitResult:
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if len(np.unique(val.labels)) < 2:
        raise ConfigError("validation set contains a single class; AUC undefined")

    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    params = model.parameters()
    state = OptimizerState.for_params(params, beta1=config.beta1, beta2=config.beta2,
                                      eps=config.adam_eps, weight_decay=config.weight_decay,
                                      base_lr=config.lr)
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total_steps = config.max_epochs * steps_per_epoch
    warmup_steps = int(config.warmup_fraction * total_steps)

    history: list[EpochRecord] = []
    steps: list[StepRecord] = []
    best_auc = -math.inf
    best_state = None
    best_epoch = -1
    since_best = 0
    aborts = 0
    step = 0
    stopped_early = False
    fh = open(log_path, "w") if log_path is not None else None
    t0 = time.perf_counter()
    try:
        for epoch in range(config.max_epochs):
            weights = lambda_schedule(epoch, config)
            sums = dict.fromkeys((*COMPONENTS, "total"), 0.0)
            n_ok = 0
            lr = cosine_lr(step, total_steps, warmup_steps, config.lr, config.min_lr)
            for idx in batch_indices(len(train), config.batch_size, shuffle_rng):
                lr = cosine_lr(step, total_steps, warmup_steps, config.lr, config.min_lr)
                batch = train.subset(idx)
                try:
                    report, grads = train_step(model, batch, weights, config, dropout_rng)
                    grads, norm = clip_gradients(grads, config.clip_norm)
                except NumericalError as exc:
                    aborts += 1
                    log.warning("epoch %d step %d aborted: %s", epoch, step, exc)
                    steps.append(StepRecord(step, epoch, lr, math.nan, math.nan, skipped=True))
                    step += 1
                    if aborts >= MAX_CONSECUTIVE_ABORTS:
                        raise NumericalError(
                            f"{MAX_CONSECUTIVE_ABORTS} consecutive steps aborted; stopping run") from exc
                    continue
                aborts = 0
                adamw_step(params, grads, state, lr)
                steps.append(StepRecord(step, epoch, lr, norm, global_norm(grads)))
                step += 1
                n_ok += 1
                for k, v in report.as_dict().items():
                    sums[k] += v
            losses = {k: (v / n_ok if n_ok else math.nan) for k, v in sums.items()}
            val_metrics = evaluate_model(model, val)
            rec = EpochRecord(epoch, losses, val_metrics, lr, weights)
            history.append(rec)
            if fh is not None:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            log.info("epoch %d loss %.4f val auc %.4f", epoch, losses["total"], val_metrics.auc)
            if val_metrics.auc > best_auc:
                best_auc = val_metrics.auc
                best_state = model.state_dict()
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    stopped_early = True
                    break
    finally:
        if fh is not None:
            fh.close()
    elapsed = time.perf_counter() - t0
    if best_state is not None:
        model.load_state_dict(best_state)
    return FitResult(model, history, steps, best_epoch, stopped_early, elapsed / max(len(history), 1))
