import argparse
import json

import pytest

from dsrsd.config import RunConfig, add_config_arguments, default_dict, resolve
from dsrsd.errors import ConfigError


def parse(argv, env=None):
    p = argparse.ArgumentParser()
    add_config_arguments(p)
    return resolve(p.parse_args(argv), env=env or {})


def test_defaults_are_the_documented_values():
    t = RunConfig().train
    assert (t.lambda_con, t.lambda_align, t.lambda_dec, t.lambda_orth, t.lambda_task) == (1.0, 0.5, 0.05, 0.05, 1.0)
    assert (t.lr, t.weight_decay, t.clip_norm, t.patience, t.batch_size) == (1e-4, 1e-5, 5.0, 10, 128)
    assert (t.warmup_fraction, t.dropout, t.smoothing, t.head_hidden) == (0.05, 0.2, 0.05, 128)
    assert RunConfig().split.ratios == (0.7, 0.1, 0.2)
    assert RunConfig().sweep.p_grid == (0.1, 0.3, 0.5)


def test_json_round_trip():
    cfg = parse(["--lambda-dec", "0", "--sweep.p_grid", "0.2", "0.4"])
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"train": {"nope": 1}}, {"train": {"lr": "fast"}},
                                 {"train": {"batch_size": 1.5}}, {"train": 3}, {"seed": None}])
def test_strict_parsing(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"seed": 3, "train": {"lr": 0.01, "d": 8}}))
    cfg = parse(["--config", str(f)])
    assert (cfg.seed, cfg.train.lr, cfg.train.d) == (3, 0.01, 8)
    cfg = parse(["--config", str(f)], env={"DSRSD_SEED": "11"})
    assert cfg.seed == 11 and cfg.train_config().seed == 11
    cfg = parse(["--config", str(f), "--seed", "5", "--train.lr", "0.5"], env={"DSRSD_SEED": "11"})
    assert (cfg.seed, cfg.train.lr, cfg.train.d) == (5, 0.5, 8)


def test_bad_env_seed():
    with pytest.raises(ConfigError, match="DSRSD_SEED"):
        parse([], env={"DSRSD_SEED": "abc"})


def test_config_hash_tracks_experiment_not_location():
    a, b = parse(["--output-dir", "x"]), parse(["--output-dir", "y"])
    assert a.config_hash() == b.config_hash()
    assert parse(["--lambda-dec", "0"]).config_hash() != a.config_hash()


def test_every_key_has_a_flag_with_default_in_help():
    p = argparse.ArgumentParser()
    add_config_arguments(p)
    help_text = p.format_help()
    for section, keys in default_dict().items():
        if isinstance(keys, dict):
            for k, v in keys.items():
                assert f"--{section}.{k}" in help_text
