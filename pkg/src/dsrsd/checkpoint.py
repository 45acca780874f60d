"""Versioned binary checkpoints.

Layout::

    8 bytes   magic  b"DSRSDCK\\x01"
    8 bytes   header length n, unsigned little-endian
    n bytes   UTF-8 JSON header (model config, parameter names/shapes, config hash)
    rest      parameters in header order, little-endian float64, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError
from .model import DSRSDNet, ModelConfig

MAGIC = b"DSRSDCK\x01"
FORMAT = "dsrsd-checkpoint/1"
_LE_F64 = np.dtype("<f8")


def encode(model: DSRSDNet, config_hash: str | None = None, extra: dict | None = None) -> bytes:
    params = list(model.named_parameters())
    header = {
        "format": FORMAT,
        "model": model.config.as_dict(),
        "params": [{"name": k, "shape": list(p.shape)} for k, p in params],
        "n_values": int(sum(p.data.size for _, p in params)),
        "config_hash": config_hash,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(np.ascontiguousarray(p.data, dtype=_LE_F64).tobytes() for _, p in params)
    return MAGIC + struct.pack("<Q", len(head)) + head + blob


def save(model: DSRSDNet, path, config_hash: str | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode(model, config_hash, extra))
    return path


def decode(raw: bytes, source="<bytes>") -> tuple[DSRSDNet, dict]:
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise IngestionError("not a checkpoint (bad magic bytes)", source)
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise IngestionError("truncated checkpoint header", source)
    try:
        header = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IngestionError(f"corrupt checkpoint header: {exc}", source) from None
    if header.get("format") != FORMAT:
        raise IngestionError(f"unsupported checkpoint format {header.get('format')!r}", source)
    values = np.frombuffer(raw, dtype=_LE_F64, offset=16 + n) if len(raw) > 16 + n else np.empty(0)
    if values.size != header["n_values"] or (len(raw) - 16 - n) % 8:
        raise IngestionError(f"parameter blob has {values.size} values, header says {header['n_values']}",
                             source)
    model = DSRSDNet(ModelConfig(**header["model"]), seed=0)
    state, pos = {}, 0
    for entry in header["params"]:
        size = int(np.prod(entry["shape"]))
        state[entry["name"]] = values[pos:pos + size].reshape(entry["shape"]).astype(np.float64)
        pos += size
    try:
        model.load_state_dict(state)
    except ConfigError as exc:
        raise IngestionError(f"checkpoint does not match its model config: {exc}", source) from None
    return model, header


def load(path) -> tuple[DSRSDNet, dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), path)
