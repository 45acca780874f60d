"""Bimodal datasets: synthetic latent-factor generator, CSV ingestion/export,
splitting, batching, and test-time modality dropout."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, IngestionError

MANIFEST_FORMAT = "dsrsd-manifest/1"


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


@dataclass(frozen=True)
class MultimodalDataset:
    features_a: np.ndarray
    features_b: np.ndarray
    labels: np.ndarray
    n_classes: int = 2
    mask_a: np.ndarray | None = None
    mask_b: np.ndarray | None = None
    features_ctx: np.ndarray | None = None
    sample_ids: np.ndarray | None = None
    shared_factors: np.ndarray | None = None
    private_a: np.ndarray | None = None
    private_b: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        set_ = object.__setattr__
        set_(self, "features_a", _as_matrix(self.features_a))
        set_(self, "features_b", _as_matrix(self.features_b))
        set_(self, "labels", np.asarray(self.labels).astype(np.int64))
        for name in ("mask_a", "mask_b"):
            m = getattr(self, name)
            set_(self, name, np.ones(n, dtype=bool) if m is None else np.asarray(m, dtype=bool))
        if self.sample_ids is None:
            set_(self, "sample_ids", np.arange(n, dtype=np.int64))
        if self.features_ctx is not None:
            set_(self, "features_ctx", _as_matrix(self.features_ctx))
        for name in ("features_a", "features_b", "mask_a", "mask_b", "sample_ids",
                     "features_ctx", "shared_factors", "private_a", "private_b"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise DataError(f"{name} has {len(v)} rows but labels have {n}")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.n_classes))
        if bad.size:
            raise DataError(f"label {self.labels[bad[0]]} at row {int(bad[0])} outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def inputs_a(self) -> np.ndarray:
        """Modality-A encoder input; a contextual block, if any, is appended to it."""
        if self.features_ctx is None:
            return self.features_a
        return np.hstack([self.features_a, self.features_ctx])

    @property
    def inputs_b(self) -> np.ndarray:
        return self.features_b

    @property
    def dim_a(self) -> int:
        return self.inputs_a.shape[1]

    @property
    def dim_b(self) -> int:
        return self.features_b.shape[1]

    def require_all_classes(self, what: str = "dataset") -> None:
        present = set(np.unique(self.labels).tolist())
        missing = sorted(set(range(self.n_classes)) - present)
        if missing:
            raise DataError(f"{what} has no samples of class(es) {missing}")

    def subset(self, idx) -> "MultimodalDataset":
        idx = np.asarray(idx, dtype=np.int64)

        def take(a):
            return None if a is None else a[idx]

        return MultimodalDataset(
            self.features_a[idx], self.features_b[idx], self.labels[idx], self.n_classes,
            self.mask_a[idx], self.mask_b[idx], take(self.features_ctx), self.sample_ids[idx],
            take(self.shared_factors), take(self.private_a), take(self.private_b))


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 2000
    dim_a: int = 20
    dim_b: int = 20
    k_shared: int = 4
    k_private: int = 4
    noise: float = 0.5
    label_vector: tuple | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"synthetic.n must be >= 1, got {self.n}")
        if self.k_shared < 1:
            raise ConfigError("synthetic.k_shared must be >= 1")
        if self.k_private < 0:
            raise ConfigError("synthetic.k_private must be >= 0")
        if self.noise < 0:
            raise ConfigError("synthetic.noise must be >= 0")
        k = self.k_shared + self.k_private
        if self.dim_a < k or self.dim_b < k:
            raise ConfigError(f"feature dims must be >= k_shared + k_private = {k}")
        if self.label_vector is not None and len(self.label_vector) != self.k_shared:
            raise ConfigError("synthetic.label_vector must have k_shared entries")


def _orthonormal_columns(rng, rows, cols) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> MultimodalDataset:
    """Linear latent-factor data: x_m = [shared, private_m] @ M_m.T + noise.

    Mixing matrices have orthonormal columns; label = 1{shared . v > 0}.
    """
    rng = np.random.default_rng(seed)
    k = spec.k_shared + spec.k_private
    M_a = _orthonormal_columns(rng, spec.dim_a, k)
    M_b = _orthonormal_columns(rng, spec.dim_b, k)
    if spec.label_vector is None:
        v = rng.standard_normal(spec.k_shared)
        v /= np.linalg.norm(v)
    else:
        v = np.asarray(spec.label_vector, dtype=np.float64)
    shared = rng.standard_normal((spec.n, spec.k_shared))
    priv_a = rng.standard_normal((spec.n, spec.k_private))
    priv_b = rng.standard_normal((spec.n, spec.k_private))
    x_a = np.hstack([shared, priv_a]) @ M_a.T + spec.noise * rng.standard_normal((spec.n, spec.dim_a))
    x_b = np.hstack([shared, priv_b]) @ M_b.T + spec.noise * rng.standard_normal((spec.n, spec.dim_b))
    labels = (shared @ v > 0).astype(np.int64)
    return MultimodalDataset(x_a, x_b, labels, 2, shared_factors=shared, private_a=priv_a,
                             private_b=priv_b)


# --- CSV ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_features_csv(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(values.shape[1])])
        for row in values:
            w.writerow([_fmt(x) for x in row])


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"])
        for y in np.asarray(labels):
            w.writerow([int(y)])


def _read_rows(path):
    if not os.path.isfile(path):
        raise IngestionError("file not found", path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError("empty file (missing header row)", path, 1)
    return rows[0], rows[1:]


def read_features_csv(path) -> np.ndarray:
    header, rows = _read_rows(path)
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} cells, found {len(row)}", path, line)
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise IngestionError(f"non-numeric cell {cell!r} in column {header[j]!r}",
                                     path, line) from None
    return out


def read_labels_csv(path, n_classes: int | None = None) -> np.ndarray:
    header, rows = _read_rows(path)
    if [h.strip() for h in header] != ["label"]:
        raise IngestionError(f"label file header must be 'label', got {header}", path, 1)
    labels = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != 1:
            raise IngestionError(f"expected 1 cell, found {len(row)}", path, line)
        try:
            val = float(row[0])
        except ValueError:
            raise IngestionError(f"non-numeric label {row[0]!r}", path, line) from None
        if val != int(val):
            raise IngestionError(f"label {row[0]!r} is not an integer", path, line)
        val = int(val)
        if val < 0 or (n_classes is not None and val >= n_classes):
            raise IngestionError(f"label {val} outside [0, {n_classes})", path, line)
        labels[i] = val
    return labels


def load_csv(path_a, path_b, path_labels, path_ctx=None, n_classes: int | None = None) -> MultimodalDataset:
    """Read paired feature files; row i of every file is sample i."""
    xa = read_features_csv(path_a)
    xb = read_features_csv(path_b)
    y = read_labels_csv(path_labels, n_classes)
    xc = read_features_csv(path_ctx) if path_ctx else None
    sizes = {str(path_a): len(xa), str(path_b): len(xb), str(path_labels): len(y)}
    if xc is not None:
        sizes[str(path_ctx)] = len(xc)
    if len(set(sizes.values())) != 1:
        raise IngestionError(f"row-count mismatch: {sizes}")
    if n_classes is None:
        n_classes = max(2, int(y.max()) + 1 if len(y) else 2)
    ds = MultimodalDataset(xa, xb, y, n_classes, features_ctx=xc)
    return ds


def save_dataset(ds: MultimodalDataset, out_dir, prefix: str = "") -> Path:
    """Write A/B/labels (and ctx) CSVs plus a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    files = {"features_a": f"{prefix}A.csv", "features_b": f"{prefix}B.csv", "labels": f"{prefix}labels.csv"}
    write_features_csv(out / files["features_a"], ds.features_a)
    write_features_csv(out / files["features_b"], ds.features_b)
    write_labels_csv(out / files["labels"], ds.labels)
    if ds.features_ctx is not None:
        files["features_ctx"] = f"{prefix}ctx.csv"
        write_features_csv(out / files["features_ctx"], ds.features_ctx)
    manifest = {
        "format": MANIFEST_FORMAT,
        **files,
        "features_ctx": files.get("features_ctx"),
        "dim_a": int(ds.features_a.shape[1]),
        "dim_b": int(ds.features_b.shape[1]),
        "dim_ctx": 0 if ds.features_ctx is None else int(ds.features_ctx.shape[1]),
        "n_classes": int(ds.n_classes),
        "n_samples": len(ds),
    }
    path = out / f"{prefix}manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> MultimodalDataset:
    path = Path(path)
    if not path.is_file():
        raise IngestionError("manifest not found", path)
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    for key in ("features_a", "features_b", "labels", "n_classes"):
        if key not in m:
            raise IngestionError(f"manifest lacks key {key!r}", path)
    base = path.parent

    def resolve(p):
        return None if p is None else base / p

    ds = load_csv(resolve(m["features_a"]), resolve(m["features_b"]), resolve(m["labels"]),
                  resolve(m.get("features_ctx")), int(m["n_classes"]))
    for key, actual in (("dim_a", ds.features_a.shape[1]), ("dim_b", ds.features_b.shape[1])):
        if key in m and int(m[key]) != actual:
            raise IngestionError(f"manifest {key}={m[key]} but file has {actual} columns", path)
    ds.require_all_classes(str(path))
    return ds


# --- splitting and batching ------------------------------------------------------

def split(ds: MultimodalDataset, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Seeded permutation, then contiguous train/val/test cut (no stratification)."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split of {n} samples by {ratios} leaves an empty part "
                          f"({n_train}/{n_val}/{n_test})")
    return (ds.subset(perm[:n_train]), ds.subset(perm[n_train:n_train + n_val]),
            ds.subset(perm[n_train + n_val:]))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None):
    """Index arrays of one epoch; shuffled when ``rng`` is given; last partial batch kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]


def apply_modality_dropout(ds: MultimodalDataset, modality: str, p: float, seed: int = 0) -> MultimodalDataset:
    """Zero one modality's features (and clear its presence flag) per sample with probability p."""
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"dropout probability must lie in [0, 1], got {p}")
    key = {"A": "a", "B": "b"}.get(modality)
    if key is None:
        raise ConfigError(f"unknown modality {modality!r}; expected 'A' or 'B'")
    drop = np.random.default_rng(seed).random(len(ds)) < p
    feats = getattr(ds, f"features_{key}").copy()
    feats[drop] = 0.0
    mask = getattr(ds, f"mask_{key}") & ~drop
    changes = {f"features_{key}": feats, f"mask_{key}": mask}
    if key == "a" and ds.features_ctx is not None:
        ctx = ds.features_ctx.copy()
        ctx[drop] = 0.0
        changes["features_ctx"] = ctx
    return replace(ds, **changes)
