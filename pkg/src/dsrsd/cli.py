"""Command-line entry point: ``dsrsd <command> [--config FILE] [--section.key VALUE ...]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck
from .config import SECTIONS, RunConfig, add_config_arguments, resolve
from .data import MultimodalDataset, generate_synthetic, load_manifest, save_dataset, split
from .errors import ConfigError, DSRSDError
from .evaluation import ablation_run, diagnostics, dropout_sweep, export_embeddings
from .trainer import build_model, evaluate_model, fit

log = logging.getLogger("dsrsd")

COMMON = ("split", "synthetic", "train")
COMMANDS = {
    "gen-data": ("write a synthetic dataset (CSV files plus manifest)", ("synthetic",)),
    "train": ("train a model; writes checkpoint, epoch log, metrics and config", COMMON),
    "eval": ("evaluate a checkpoint on one split, with representation diagnostics", COMMON + ("eval",)),
    "sweep": ("modality-dropout sweep of a checkpoint", COMMON + ("sweep",)),
    "ablate": ("train the four loss-term variants over several seeds", COMMON + ("ablate",)),
    "export-embeddings": ("write fused and per-stream embeddings to CSV", COMMON + ("export",)),
    "grad-check": ("finite-difference check of every primitive and the total loss", ("gradcheck",)),
}


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _dataset(cfg: RunConfig) -> MultimodalDataset:
    if cfg.manifest:
        return load_manifest(cfg.manifest)
    return generate_synthetic(cfg.synthetic, seed=cfg.seed)


def _splits(cfg: RunConfig):
    return split(_dataset(cfg), cfg.split.ratios, seed=cfg.seed)


def _pick(cfg: RunConfig, which: str) -> MultimodalDataset:
    names = ("train", "val", "test")
    if which not in names:
        raise ConfigError(f"split must be one of {names}, got {which!r}")
    return _splits(cfg)[names.index(which)]


def _load_model(cfg: RunConfig):
    path = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.output_dir) / "model.ckpt"
    model, header = checkpoint.load(path)
    if header.get("config_hash") and header["config_hash"] != cfg.config_hash():
        log.info("checkpoint %s was trained under a different config (hash %s)", path,
                 header["config_hash"][:12])
    return model


def _write_rows(path: Path, rows: list[dict]) -> None:
    header = []
    for r in rows:
        header += [k for k in r if k not in header]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})


# --- commands -----------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    ds = generate_synthetic(cfg.synthetic, seed=cfg.seed)
    path = save_dataset(ds, _outdir(cfg))
    pos = float(np.mean(ds.labels == 1))
    print(f"N={len(ds)} class balance: {1 - pos:.4f} / {pos:.4f} (label 0 / 1)")
    print(f"manifest: {path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    train, val, test = _splits(cfg)
    tcfg = cfg.train_config()
    model = build_model(tcfg, train)
    log.info("training %d parameters on %d samples", model.n_parameters(), len(train))
    result = fit(model, train, val, tcfg, log_path=out / "epochs.jsonl")
    test_metrics = evaluate_model(model, test)
    checkpoint.save(model, out / "model.ckpt", cfg.config_hash(), {"best_epoch": result.best_epoch})
    _dump_json(out / "metrics.json", {
        "test": test_metrics.as_dict(),
        "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val_auc,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "config_hash": cfg.config_hash(),
    })
    (out / "config.json").write_text(cfg.to_json())
    print(json.dumps(test_metrics.as_dict(), sort_keys=True))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    model = _load_model(cfg)
    ds = _pick(cfg, cfg.eval.split)
    report = {"split": cfg.eval.split, "metrics": evaluate_model(model, ds).as_dict()}
    if not model.config.backbone:
        report["diagnostics"] = diagnostics(model, ds).as_dict()
    _dump_json(out / "eval.json", report)
    print(json.dumps(report["metrics"], sort_keys=True))
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    model = _load_model(cfg)
    ds = _pick(cfg, cfg.sweep.split)
    res = dropout_sweep(model, ds, cfg.sweep.p_grid, cfg.sweep.modalities, cfg.sweep.seeds)
    _write_rows(out / "sweep.csv", res.rows + res.aggregate_rows())
    for mod in cfg.sweep.modalities:
        cells = ", ".join(f"p={p}: {res.mean(mod, p):.4f}" for p in cfg.sweep.p_grid)
        print(f"modality {mod}: baseline {res.baseline.auc:.4f}; {cells}")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    ds = _dataset(cfg)
    res = ablation_run(cfg.train_config(), ds, cfg.ablate.seeds, cfg.ablate.variants,
                       keep_models=True, workers=cfg.ablate.workers)
    _write_rows(out / "ablation.csv", res.table())
    _dump_json(out / "ablation_lambdas.json", {v: res.by_variant(v)[0].lambdas for v in res.variants})
    cost = {}
    for v in res.variants:
        runs = res.by_variant(v)
        cost[v] = {"n_parameters": runs[0].fit.model.n_parameters(),
                   "seconds_per_epoch": float(np.mean([r.fit.seconds_per_epoch for r in runs]))}
    _dump_json(out / "cost.json", cost)
    for v in res.variants:
        print(f"{v:10s} auc {res.mean(v):.4f}")
    return 0


def cmd_export(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    model = _load_model(cfg)
    ds = _pick(cfg, cfg.export.split)
    opts = cfg.export
    path = export_embeddings(model, ds, out / opts.filename, opts.include_s, opts.include_p, opts.include_h)
    print(f"wrote {len(ds)} rows to {path}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    g = cfg.gradcheck
    t0 = time.perf_counter()
    reports = gradcheck.run_suite(g.n_seeds, g.batch, g.d, g.eps, g.tol, g.composite_seeds)
    elapsed = time.perf_counter() - t0
    for r in reports:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.label:40s} max_rel={r.max_rel_error:.3e}")
    failed = [r.label for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed in {elapsed:.1f}s")
    return 3 if failed else 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "export-embeddings": cmd_export,
    "grad-check": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsrsd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (help_text, sections) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        add_config_arguments(p, tuple(s for s in SECTIONS if s in sections))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve(flags)
        return HANDLERS[args.command](cfg)
    except DSRSDError as exc:
        print(f"dsrsd {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dsrsd {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
