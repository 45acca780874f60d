import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsrsd.data import (MultimodalDataset, SyntheticSpec, apply_modality_dropout, batch_indices,
                        generate_synthetic, load_csv, load_manifest, read_features_csv, save_dataset, split,
                        write_features_csv, write_labels_csv)
from dsrsd.errors import ConfigError, DataError, IngestionError


def test_noiseless_shared_only_is_linear_image():
    ds = generate_synthetic(SyntheticSpec(n=200, dim_a=6, dim_b=5, k_shared=3, k_private=0, noise=0.0), seed=3)
    coef, *_ = np.linalg.lstsq(ds.features_a, ds.features_b, rcond=None)
    assert np.max(np.abs(ds.features_a @ coef - ds.features_b)) < 1e-10


def test_label_rule_first_coordinate():
    spec = SyntheticSpec(n=500, dim_a=6, dim_b=6, k_shared=2, k_private=1, noise=0.0, label_vector=(1.0, 0.0))
    ds = generate_synthetic(spec, seed=0)
    np.testing.assert_array_equal(ds.labels, (ds.shared_factors[:, 0] > 0).astype(int))


def test_default_spec_class_balance():
    for seed in range(10):
        frac = generate_synthetic(SyntheticSpec(), seed=seed).labels.mean()
        assert 0.45 <= frac <= 0.55, (seed, frac)


def test_generator_deterministic():
    a, b = generate_synthetic(SyntheticSpec(n=50), 9), generate_synthetic(SyntheticSpec(n=50), 9)
    assert a.features_a.tobytes() == b.features_a.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


@pytest.mark.parametrize("bad", [dict(n=0), dict(k_shared=0), dict(noise=-1.0), dict(dim_a=3)])
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        SyntheticSpec(**bad)


def test_dataset_invariants():
    with pytest.raises(DataError):
        MultimodalDataset(np.zeros((3, 2)), np.zeros((2, 2)), [0, 1, 0])
    with pytest.raises(DataError, match="row 2"):
        MultimodalDataset(np.zeros((3, 2)), np.zeros((3, 2)), [0, 1, 2])


def test_ctx_block_goes_into_modality_a():
    ds = MultimodalDataset(np.ones((2, 2)), np.zeros((2, 3)), [0, 1], features_ctx=np.full((2, 1), 7.0))
    assert ds.dim_a == 3
    np.testing.assert_array_equal(ds.inputs_a[:, 2], 7.0)


# --- CSV -----------------------------------------------------------------------------

def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_files(tmp_path):
    a = _write(tmp_path, "a.csv", "f0,f1\n1,2\n3,4\n5,6\n")
    b = _write(tmp_path, "b.csv", "f0\n1\n2\n3\n")
    y = _write(tmp_path, "y.csv", "label\n0\n1\n0\n")
    ds = load_csv(a, b, y, n_classes=2)
    assert len(ds) == 3 and ds.dim_a == 2 and ds.dim_b == 1


def test_label_out_of_range_reports_line(tmp_path):
    y = _write(tmp_path, "y.csv", "label\n0\n2\n")
    a = _write(tmp_path, "a.csv", "f0\n1\n2\n")
    with pytest.raises(IngestionError) as exc:
        load_csv(a, a, y, n_classes=2)
    assert exc.value.line == 3


def test_non_numeric_cell_and_missing_file(tmp_path):
    a = _write(tmp_path, "a.csv", "f0,f1\n1,2\n3,x\n")
    with pytest.raises(IngestionError) as exc:
        read_features_csv(a)
    assert exc.value.line == 3 and "x" in str(exc.value)
    with pytest.raises(IngestionError, match="not found"):
        read_features_csv(tmp_path / "nope.csv")


def test_row_count_mismatch(tmp_path):
    a = _write(tmp_path, "a.csv", "f0\n1\n2\n")
    b = _write(tmp_path, "b.csv", "f0\n1\n")
    y = _write(tmp_path, "y.csv", "label\n0\n1\n")
    with pytest.raises(IngestionError, match="row-count"):
        load_csv(a, b, y)


@given(st.integers(0, 2**31 - 1))
def test_csv_round_trip_bit_exact(seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-300, 300, (4, 3))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.csv"
        write_features_csv(p, x)
        assert read_features_csv(p).tobytes() == x.tobytes()


def test_manifest_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(n=30, dim_a=9, dim_b=8), seed=2)
    path = save_dataset(ds, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["A.csv", "B.csv", "labels.csv", "manifest.json"]
    m = json.loads(path.read_text())
    assert (m["dim_a"], m["dim_b"], m["n_classes"]) == (9, 8, 2)
    back = load_manifest(path)
    assert back.features_a.tobytes() == ds.features_a.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()


def test_labels_csv_header(tmp_path):
    write_labels_csv(tmp_path / "y.csv", [1, 0])
    assert (tmp_path / "y.csv").read_text() == "label\n1\n0\n"


# --- split / batches ------------------------------------------------------------------

def test_split_sizes_and_determinism():
    ds = generate_synthetic(SyntheticSpec(n=10), seed=0)
    tr, va, te = split(ds, seed=4)
    assert (len(tr), len(va), len(te)) == (7, 1, 2)
    tr2, _, _ = split(ds, seed=4)
    assert tr.sample_ids.tolist() == tr2.sample_ids.tolist()


@given(st.integers(10, 400), st.integers(0, 2**31 - 1))
def test_split_is_partition(n, seed):
    ds = MultimodalDataset(np.zeros((n, 1)), np.zeros((n, 1)), np.arange(n) % 2)
    parts = split(ds, seed=seed)
    ids = np.concatenate([p.sample_ids for p in parts])
    assert sorted(ids.tolist()) == list(range(n))


def test_split_errors():
    ds = MultimodalDataset(np.zeros((3, 1)), np.zeros((3, 1)), [0, 1, 0])
    with pytest.raises(ConfigError):
        split(ds)
    with pytest.raises(ConfigError):
        split(generate_synthetic(SyntheticSpec(n=50), 0), ratios=(0.5, 0.5, 0.5))


def test_batches_keep_partial_tail():
    sizes = [len(b) for b in batch_indices(10, 4, np.random.default_rng(0))]
    assert sizes == [4, 4, 2]


# --- modality dropout ------------------------------------------------------------------

def test_modality_dropout_endpoints():
    ds = generate_synthetic(SyntheticSpec(n=100), seed=0)
    same = apply_modality_dropout(ds, "A", 0.0, seed=1)
    assert same.features_a.tobytes() == ds.features_a.tobytes() and same.mask_a.all()
    gone = apply_modality_dropout(ds, "B", 1.0, seed=1)
    assert not gone.features_b.any() and not gone.mask_b.any()
    assert gone.labels.tobytes() == ds.labels.tobytes()


def test_modality_dropout_rate():
    ds = MultimodalDataset(np.ones((10000, 2)), np.ones((10000, 2)), np.arange(10000) % 2)
    frac = 1 - apply_modality_dropout(ds, "A", 0.3, seed=0).mask_a.mean()
    assert abs(frac - 0.3) <= 0.02


def test_modality_dropout_errors():
    ds = generate_synthetic(SyntheticSpec(n=20), seed=0)
    with pytest.raises(ConfigError):
        apply_modality_dropout(ds, "C", 0.5)
    with pytest.raises(ConfigError):
        apply_modality_dropout(ds, "A", 1.5)


@given(st.sampled_from(["A", "B"]), st.floats(0, 1), st.integers(0, 1000))
def test_other_modality_untouched(mod, p, seed):
    ds = generate_synthetic(SyntheticSpec(n=40), seed=5)
    out = apply_modality_dropout(ds, mod, p, seed)
    other = "b" if mod == "A" else "a"
    assert getattr(out, f"features_{other}").tobytes() == getattr(ds, f"features_{other}").tobytes()
    assert getattr(out, f"mask_{other}").tobytes() == getattr(ds, f"mask_{other}").tobytes()


def test_drop_sets_nested_across_p():
    ds = generate_synthetic(SyntheticSpec(n=500), seed=0)
    masks = [apply_modality_dropout(ds, "A", p, seed=3).mask_a for p in (0.1, 0.3, 0.5)]
    assert np.all(masks[1] <= masks[0]) and np.all(masks[2] <= masks[1])
