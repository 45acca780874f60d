"""Run configuration: one JSON document, strict parsing, flag overrides.

Precedence, lowest to highest: built-in defaults, the JSON file, the
``DSRSD_SEED`` environment variable, command-line flags.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError
from .trainer import TrainConfig

SEED_ENV = "DSRSD_SEED"


@dataclass(frozen=True)
class SplitOptions:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


@dataclass(frozen=True)
class SweepOptions:
    p_grid: tuple = (0.1, 0.3, 0.5)
    modalities: tuple = ("A", "B")
    seeds: tuple = (0, 1, 2, 3, 4)
    split: str = "test"


@dataclass(frozen=True)
class AblateOptions:
    seeds: tuple = (0, 1, 2, 3, 4)
    variants: tuple = ("backbone", "wo_dec", "wo_orth", "full")
    workers: int = 1


@dataclass(frozen=True)
class EvalOptions:
    split: str = "test"


@dataclass(frozen=True)
class ExportOptions:
    split: str = "test"
    include_s: bool = False
    include_p: bool = False
    include_h: bool = False
    filename: str = "embeddings.csv"


@dataclass(frozen=True)
class GradCheckOptions:
    n_seeds: int = 20
    batch: int = 8
    d: int = 6
    eps: float = 1e-5
    tol: float = 1e-4
    composite_seeds: int = 3


# train.seed is driven by the run-level seed, so it is not a separate key
_TRAIN_EXCLUDE = {"seed"}

SECTIONS: dict[str, type] = {
    "split": SplitOptions,
    "synthetic": SyntheticSpec,
    "train": TrainConfig,
    "eval": EvalOptions,
    "sweep": SweepOptions,
    "ablate": AblateOptions,
    "export": ExportOptions,
    "gradcheck": GradCheckOptions,
}
TOP_LEVEL = {"seed": 0, "output_dir": "runs/default", "manifest": None, "checkpoint": None}
_HASH_EXCLUDE = {"output_dir", "checkpoint"}


def _section_fields(name: str):
    for f in dataclasses.fields(SECTIONS[name]):
        if name == "train" and f.name in _TRAIN_EXCLUDE:
            continue
        yield f


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    manifest: str | None = None
    checkpoint: str | None = None
    split: SplitOptions = field(default_factory=SplitOptions)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    sweep: SweepOptions = field(default_factory=SweepOptions)
    ablate: AblateOptions = field(default_factory=AblateOptions)
    export: ExportOptions = field(default_factory=ExportOptions)
    gradcheck: GradCheckOptions = field(default_factory=GradCheckOptions)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in TOP_LEVEL}
        for name in SECTIONS:
            obj = getattr(self, name)
            out[name] = {f.name: _jsonable(getattr(obj, f.name)) for f in _section_fields(name)}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        """sha256 of the canonical JSON, ignoring where outputs go or come from."""
        d = {k: v for k, v in self.to_dict().items() if k not in _HASH_EXCLUDE}
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(_merge(default_dict(), data, strict=True))


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def default_dict() -> dict:
    return RunConfig().to_dict()


def _merge(base: dict, update: dict, strict: bool, where: str = "") -> dict:
    if not isinstance(update, dict):
        raise ConfigError(f"config{where or ' root'} must be a JSON object")
    out = json.loads(json.dumps(base))
    for k, v in update.items():
        path = f"{where}.{k}" if where else k
        if k not in out:
            if strict:
                raise ConfigError(f"unknown config key {path!r}")
            continue
        if isinstance(out[k], dict):
            out[k] = _merge(out[k], v, strict, path)
        else:
            out[k] = v
    return out


def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if len(args) == 1 else tp
    return tp


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(path: str, value, tp, default):
    tp = _unwrap_optional(tp)
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"config key {path!r} may not be null")
    try:
        if tp is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if tp is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError
            return int(value)
        if tp is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if tp is tuple or typing.get_origin(tp) is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            elem = type(default[0]) if default else float
            return tuple(_coerce(f"{path}[]", v, elem, None if default is None else 0) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {path!r}: cannot use {value!r} as {getattr(tp, '__name__', tp)}") from None
    return value


def _build(d: dict) -> RunConfig:
    kwargs = {}
    for k, default in TOP_LEVEL.items():
        tp = int if k == "seed" else str
        kwargs[k] = _coerce(k, d[k], tp, default)
    for name, cls in SECTIONS.items():
        hints = _field_types(cls)
        sub = {}
        for f in _section_fields(name):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            sub[f.name] = _coerce(f"{name}.{f.name}", d[name][f.name], hints[f.name], default)
        if name == "synthetic" and sub.get("label_vector") is not None:
            sub["label_vector"] = tuple(float(x) for x in sub["label_vector"])
        try:
            kwargs[name] = cls(**sub)
        except ConfigError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**kwargs)


def load_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


# --- command-line flags -------------------------------------------------------------

def _flag_type(default, tp):
    tp = _unwrap_optional(tp)
    if tp is bool:
        def parse_bool(s):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")
        return parse_bool, None
    if tp is tuple or typing.get_origin(tp) is tuple:
        elem = type(default[0]) if default else float
        return elem, "+"
    return tp if tp in (int, float, str) else str, None


def _fmt_default(v) -> str:
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return "null" if v is None else str(v)


def add_config_arguments(parser: argparse.ArgumentParser, sections=tuple(SECTIONS)) -> None:
    """Register ``--config``, top-level keys, and ``--section.key`` for the given sections."""
    parser.add_argument("--config", metavar="FILE", default=argparse.SUPPRESS,
                        help="JSON run config; flags override its values")
    top = parser.add_argument_group("run")
    top.add_argument("--seed", dest="seed", type=int, default=argparse.SUPPRESS,
                     help=f"run seed (env {SEED_ENV} overrides the file; default 0)")
    top.add_argument("--output-dir", "--output_dir", dest="output_dir", default=argparse.SUPPRESS,
                     help="output directory (default runs/default)")
    top.add_argument("--manifest", dest="manifest", default=argparse.SUPPRESS,
                     help="dataset manifest; synthetic data is generated when unset (default null)")
    top.add_argument("--checkpoint", dest="checkpoint", default=argparse.SUPPRESS,
                     help="model checkpoint to load (default null)")
    defaults = default_dict()
    for name in sections:
        group = parser.add_argument_group(name)
        hints = _field_types(SECTIONS[name])
        for f in _section_fields(name):
            default = defaults[name][f.name]
            ftype, nargs = _flag_type(default, hints[f.name])
            names = [f"--{name}.{f.name}"]
            if name == "train":
                names.append("--" + f.name.replace("_", "-"))
            group.add_argument(*names, dest=f"{name}.{f.name}", type=ftype, nargs=nargs,
                               default=argparse.SUPPRESS, metavar=f.name.upper(),
                               help=f"default {_fmt_default(default)}")


def resolve(args: argparse.Namespace | dict, env=None) -> RunConfig:
    """Apply file, env seed, and explicit flags on top of the defaults."""
    flags = dict(vars(args)) if isinstance(args, argparse.Namespace) else dict(args)
    env = os.environ if env is None else env
    merged = default_dict()
    cfg_path = flags.pop("config", None)
    if cfg_path:
        merged = _merge(merged, load_file(cfg_path), strict=True)
    if env.get(SEED_ENV, "").strip():
        raw = env[SEED_ENV].strip()
        try:
            merged["seed"] = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    for key, value in flags.items():
        if key in TOP_LEVEL:
            merged[key] = value
        elif "." in key:
            section, sub = key.split(".", 1)
            if section in merged and isinstance(merged[section], dict) and sub in merged[section]:
                merged[section][sub] = list(value) if isinstance(value, (list, tuple)) else value
    return _build(merged)
