"""Test-time protocols: modality-dropout sweeps, loss-term ablations,
representation diagnostics, and embedding export."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import MultimodalDataset, apply_modality_dropout, split
from .errors import ConfigError
from .losses import cross_covariance, decorrelation_loss
from .metrics import MetricSet
from .model import DSRSDNet
from .trainer import FitResult, TrainConfig, build_model, evaluate_model, fit

log = logging.getLogger(__name__)

METRICS = ("auc", "acc", "f1")
VARIANTS = ("backbone", "wo_dec", "wo_orth", "full")


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


# --- modality dropout --------------------------------------------------------------

@dataclass
class SweepResult:
    baseline: MetricSet
    rows: list[dict]

    def cell(self, modality: str, p: float) -> list[dict]:
        return [r for r in self.rows if r["modality"] == modality and r["p"] == p]

    def mean(self, modality: str, p: float, metric: str = "auc") -> float:
        return float(np.mean([r[metric] for r in self.cell(modality, p)]))

    def mean_degradation(self, modality: str, p: float, metric: str = "auc") -> float:
        return getattr(self.baseline, metric) - self.mean(modality, p, metric)

    def aggregate_rows(self) -> list[dict]:
        out = []
        keys = []
        for r in self.rows:
            k = (r["modality"], r["p"])
            if k not in keys:
                keys.append(k)
        for mod, p in keys:
            cell = self.cell(mod, p)
            for stat in ("mean", "std"):
                row = {"modality": mod, "p": p, "seed": stat}
                for m in (*METRICS, *(f"delta_{x}" for x in METRICS)):
                    mu, sd = _mean_std([r[m] for r in cell])
                    row[m] = mu if stat == "mean" else sd
                out.append(row)
        return out


def dropout_sweep(model: DSRSDNet, test: MultimodalDataset, p_grid=(0.1, 0.3, 0.5),
                  modalities=("A", "B"), seeds=(0, 1, 2, 3, 4)) -> SweepResult:
    """Corrupt one modality at a time with probability p and re-evaluate; no retraining.

    The same seed gives nested drop sets across p (common random numbers).
    """
    p_grid = list(p_grid)
    if not p_grid:
        raise ConfigError("dropout_sweep needs a non-empty p grid")
    base = evaluate_model(model, test)
    rows = []
    for mod in modalities:
        for p in p_grid:
            for s in seeds:
                m = evaluate_model(model, apply_modality_dropout(test, mod, p, s))
                row = {"modality": mod, "p": p, "seed": s, **m.as_dict()}
                for k in METRICS:
                    row[f"delta_{k}"] = getattr(base, k) - row[k]
                rows.append(row)
    return SweepResult(base, rows)


# --- ablation ---------------------------------------------------------------------

def variant_config(config: TrainConfig, variant: str) -> TrainConfig:
    if variant == "full":
        return config
    if variant == "wo_dec":
        return replace(config, lambda_dec=0.0)
    if variant == "wo_orth":
        return replace(config, lambda_orth=0.0)
    if variant == "backbone":
        return replace(config, backbone=True, lambda_con=0.0, lambda_align=0.0, lambda_dec=0.0,
                       lambda_orth=0.0)
    raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class AblationRun:
    variant: str
    seed: int
    config: TrainConfig
    test: MetricSet
    fit: FitResult | None = None
    splits: tuple | None = None

    @property
    def lambdas(self) -> dict:
        return self.config.target_weights().as_dict()


@dataclass
class AblationResult:
    runs: list[AblationRun]
    variants: tuple = VARIANTS

    def by_variant(self, variant: str) -> list[AblationRun]:
        return [r for r in self.runs if r.variant == variant]

    def mean(self, variant: str, metric: str = "auc") -> float:
        return float(np.mean([getattr(r.test, metric) for r in self.by_variant(variant)]))

    def table(self) -> list[dict]:
        rows = []
        for r in self.runs:
            rows.append({"variant": r.variant, "seed": r.seed, **r.test.as_dict(),
                         **{f"lambda_{k}": v for k, v in r.lambdas.items()},
                         "best_epoch": r.fit.best_epoch if r.fit else "",
                         "n_params": r.fit.model.n_parameters() if r.fit else ""})
        for v in self.variants:
            runs = self.by_variant(v)
            if not runs:
                continue
            for stat in ("mean", "std"):
                row = {"variant": v, "seed": stat}
                for m in METRICS:
                    mu, sd = _mean_std([getattr(r.test, m) for r in runs])
                    row[m] = mu if stat == "mean" else sd
                rows.append(row)
        return rows


def _resolve_dataset(dataset, seed):
    ds = dataset(seed) if callable(dataset) else dataset
    return split(ds, seed=seed)


def _run_one(config: TrainConfig, variant: str, dataset, seed: int, keep: bool) -> AblationRun:
    train, val, test = _resolve_dataset(dataset, seed)
    cfg = replace(variant_config(config, variant), seed=seed)
    model = build_model(cfg, train)
    result = fit(model, train, val, cfg)
    return AblationRun(variant, seed, cfg, evaluate_model(model, test),
                       result if keep else None, (train, val, test) if keep else None)


def ablation_run(config: TrainConfig, dataset, seeds=(0, 1, 2, 3, 4), variants=VARIANTS,
                 keep_models: bool = True, workers: int = 1) -> AblationResult:
    """Train every variant on every seed with identical splits per seed.

    ``dataset`` is a MultimodalDataset (re-split per seed) or a callable
    ``seed -> MultimodalDataset``.
    """
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ConfigError("ablation needs at least 3 seeds")
    jobs = [(v, s) for s in seeds for v in variants]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one, config, v, dataset, s, keep_models) for v, s in jobs]
            runs = [f.result() for f in futs]
    else:
        runs = [_run_one(config, v, dataset, s, keep_models) for v, s in jobs]
    return AblationResult(runs, tuple(variants))


# --- diagnostics ------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsReport:
    offdiag_energy: float
    diag_energy: float
    orth_residual: float
    gate_entropy: float
    h_norm_a: float
    h_norm_b: float
    n_samples: int

    def as_dict(self):
        return asdict(self)


def diagnostics(model: DSRSDNet, ds: MultimodalDataset, batch_size: int = 256) -> DiagnosticsReport:
    """Covariance energy, shared/private overlap, and gate entropy on ``ds`` (eval mode).

    Batch statistics are averaged with batch-size weights; batches of one row
    are left out of the covariance terms.
    """
    if model.config.backbone:
        raise ConfigError("diagnostics need the dual-stream model (backbone has no shared/private streams)")
    n = len(ds)
    off = diag = 0.0
    cov_weight = 0
    orth = ent = na = nb = 0.0
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        out = model.forward(ds.inputs_a[sl], ds.inputs_b[sl], ds.mask_a[sl], ds.mask_b[sl])
        st = out.stream
        b = st.u.rows
        hA, hB = st.h["A"], st.h["B"]
        if b >= 2:
            C = cross_covariance(hA, hB)
            off += b * decorrelation_loss(C).item()
            diag += b * float(np.sum(np.diag(C.data) ** 2))
            cov_weight += b
        dots = (np.sum(st.s["A"].data * st.p["A"].data, axis=1) ** 2
                + np.sum(st.s["B"].data * st.p["B"].data, axis=1) ** 2)
        orth += float(dots.sum())
        a = st.alpha.data
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a > 0, -a * np.log(a), 0.0)
        ent += float(terms.sum())
        na += float(np.linalg.norm(hA.data, axis=1).sum())
        nb += float(np.linalg.norm(hB.data, axis=1).sum())
    off = off / cov_weight if cov_weight else math.nan
    diag = diag / cov_weight if cov_weight else math.nan
    return DiagnosticsReport(off, diag, orth / n, ent / n, na / n, nb / n, n)


# --- export -----------------------------------------------------------------------

def export_embeddings(model: DSRSDNet, ds: MultimodalDataset, path, include_s: bool = False,
                      include_p: bool = False, include_h: bool = False, batch_size: int = 256) -> Path:
    """CSV: sample_id, label, u_0..u_{d-1}, then optional s/p/h blocks per modality."""
    if model.config.backbone:
        raise ConfigError("embedding export needs the dual-stream model")
    d = model.config.d
    blocks = [("u", None)]
    for flag, key in ((include_s, "s"), (include_p, "p"), (include_h, "h")):
        if flag:
            blocks += [(key, "A"), (key, "B")]
    header = ["sample_id", "label"]
    for key, mod in blocks:
        prefix = key if mod is None else f"{key}_{mod}"
        header += [f"{prefix}_{j}" for j in range(d)]
    path = Path(path)
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for lo in range(0, len(ds), batch_size):
            sl = slice(lo, lo + batch_size)
            st = model.forward(ds.inputs_a[sl], ds.inputs_b[sl], ds.mask_a[sl], ds.mask_b[sl]).stream
            mats = []
            for key, mod in blocks:
                mats.append(st.u.data if mod is None else getattr(st, key)[mod].data)
            full = np.hstack(mats)
            for i in range(full.shape[0]):
                w.writerow([int(ds.sample_ids[lo + i]), int(ds.labels[lo + i]),
                            *(format(float(x), ".17g") for x in full[i])])
    return path
