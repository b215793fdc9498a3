import json
from pathlib import Path

import pytest

from utils.config import FULL_SCALE_DEFAULTS, RunConfig, apply_override, config_hash, load_config, save_config
from utils.errors import ConfigError

CONFIG_DIR = Path(__file__).parent.parent / "configs"


def test_defaults_are_valid():
    cfg = load_config()
    assert cfg.model.variant == "full"
    assert cfg.eval.theta == 5.0
    assert cfg.l2.max_span_len == 6


def test_bundled_configs_load():
    tiny = load_config(CONFIG_DIR / "tiny.json")
    assert tiny.seed == 7
    assert tiny.text.hidden == 16
    assert tiny.eval.thetas == [0.0, 1.0, 2.0]
    assert tiny.l2.lr == RunConfig().l2.lr
    load_config(CONFIG_DIR / "desk.json")


def test_overrides_are_typed():
    cfg = load_config(overrides=[
        "l1.k=7", "l2.lr=0.01", "model.variant=no_gat", "eval.thetas=1,2.5",
        "eval.always_trigger=yes", "eval.min_rank_score=0.5", "log_level=DEBUG",
    ])
    assert cfg.l1.k == 7
    assert cfg.l2.lr == 0.01
    assert cfg.model.variant == "no_gat"
    assert cfg.eval.thetas == [1.0, 2.5]
    assert cfg.eval.always_trigger is True
    assert cfg.eval.min_rank_score == 0.5
    assert cfg.log_level == "DEBUG"


def test_optional_override_accepts_none():
    cfg = RunConfig()
    apply_override(cfg, "eval.min_rank_score=0.1")
    apply_override(cfg, "eval.min_rank_score=none")
    assert cfg.eval.min_rank_score is None


def test_seed_flag_wins_over_overrides():
    assert load_config(overrides=["seed=3"], seed=9).seed == 9


@pytest.mark.parametrize("assignment", [
    "l1.nope=1", "nope.k=1", "l1=3", "l1.k", "l1.k=seven", "eval.always_trigger=maybe",
    "model.variant=bert", "eval.thetas=",
])
def test_bad_overrides(assignment):
    with pytest.raises(ConfigError):
        load_config(overrides=[assignment])


def test_unknown_file_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"l1": {"k": 3, "warmup": 10}}))
    with pytest.raises(ConfigError, match="warmup"):
        load_config(path)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    empty = tmp_path / "empty.json"
    empty.write_text("")
    with pytest.raises(ConfigError):
        load_config(empty)


def test_saved_config_loads_back(tmp_path):
    cfg = load_config(overrides=["l1.k=4", "eval.thetas=2,3"])
    path = tmp_path / "saved.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_hash_ignores_logging_and_eval():
    base = RunConfig()
    other = load_config(overrides=["log_level=DEBUG", "eval.theta=2.0"])
    assert config_hash(base) == config_hash(other)
    assert config_hash(base) != config_hash(load_config(overrides=["l1.k=3"]))


def test_shared_hash_ignores_the_variant():
    full = RunConfig()
    ablated = load_config(overrides=["model.variant=no_kg"])
    assert config_hash(full) != config_hash(ablated)
    assert config_hash(full, shared=True) == config_hash(ablated, shared=True)
    assert len(config_hash(full)) == 64


def test_full_scale_values_apply_as_overrides():
    overrides = [f"{section}.{key}={value}" for section, values in FULL_SCALE_DEFAULTS.items()
                 for key, value in values.items()]
    cfg = load_config(overrides=overrides)
    assert cfg.gat.hidden == 400
    assert cfg.l1.batch_size == 64
    assert cfg.l2.hard_negatives == 4
