"""Run configuration parsing: defaults, strict typing, dotted error paths."""

import json

import pytest

from audio2image.config import (
    RunConfig,
    config_from_dict,
    load_config,
    override_seed,
)
from audio2image.errors import ConfigError


def test_empty_config_is_full_scale_defaults():
    cfg = config_from_dict({})
    assert cfg.model.n_classes == 13
    assert cfg.model.resolution == 256
    assert cfg.model.base_channels == 64
    assert cfg.model.unet_depth == 6
    assert cfg.model.use_attention
    assert cfg.train.learning_rate == 0.0008
    assert cfg.train.adam_beta1 == 0.9
    assert cfg.train.adam_beta2 == 0.999
    assert cfg.train.batch_size == 64
    assert cfg.train.epochs == 200
    assert cfg.train.weights.l1 == 100.0
    assert cfg.train.weights.cls_coarse == 0.5
    assert cfg.train.ablation == "E"
    assert cfg.dataset.preprocess.sample_rate == 16000
    assert cfg.dataset.preprocess.fft_size == 512
    assert cfg.dataset.preprocess.hop_length == 256
    assert cfg.dataset.preprocess.mel_bins == 128


def test_nested_overrides_apply():
    cfg = config_from_dict(
        {
            "run_name": "exp1",
            "model": {"n_classes": 4, "resolution": 32, "unet_depth": 3},
            "train": {"epochs": 2, "weights": {"cls": 0.0}},
            "dataset": {"kind": "toy", "toy": {"n_classes": 4, "per_class": 2}},
        }
    )
    assert cfg.run_name == "exp1"
    assert cfg.model.resolution == 32
    assert cfg.train.epochs == 2
    assert cfg.train.weights.cls == 0.0
    assert cfg.train.weights.l1 == 100.0  # untouched sibling keeps its default
    assert cfg.dataset.toy.per_class == 2


def test_unknown_keys_report_dotted_path():
    with pytest.raises(ConfigError, match="train.leraning_rate: unknown config key"):
        config_from_dict({"train": {"leraning_rate": 0.1}})
    with pytest.raises(ConfigError, match="model.extra: unknown config key"):
        config_from_dict({"model": {"n_classes": 4, "resolution": 32, "unet_depth": 3, "extra": 1}})
    with pytest.raises(ConfigError, match="^nope: unknown config key"):
        config_from_dict({"nope": 1})


def test_strict_types():
    with pytest.raises(ConfigError, match="train.epochs: expected an integer"):
        config_from_dict({"train": {"epochs": True}})
    with pytest.raises(ConfigError, match="train.epochs: expected an integer"):
        config_from_dict({"train": {"epochs": 2.5}})
    with pytest.raises(ConfigError, match="model.use_attention: expected a boolean"):
        config_from_dict({"model": {"use_attention": 1}})
    with pytest.raises(ConfigError, match="run_name: expected a string"):
        config_from_dict({"run_name": 3})
    # ints are acceptable where floats are expected
    cfg = config_from_dict({"train": {"learning_rate": 1}})
    assert cfg.train.learning_rate == 1.0


def test_invalid_values_carry_section_path():
    with pytest.raises(ConfigError, match="train: learning_rate must be positive"):
        config_from_dict({"train": {"learning_rate": -1.0}})
    with pytest.raises(ConfigError, match="dataset: dataset.kind"):
        config_from_dict({"dataset": {"kind": "mystery"}})
    with pytest.raises(ConfigError, match="version"):
        config_from_dict({"version": 99})


def test_section_must_be_object():
    with pytest.raises(ConfigError, match="train: expected an object"):
        config_from_dict({"train": 3})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"run_name": "trial", "train": {"seed": 9}}))
    cfg = load_config(path)
    assert cfg.run_name == "trial"
    assert cfg.train.seed == 9


def test_override_seed_replaces_only_seed():
    cfg = config_from_dict({"train": {"seed": 1, "epochs": 7}})
    new = override_seed(cfg, 42)
    assert new.train.seed == 42
    assert new.train.epochs == 7
    assert cfg.train.seed == 1  # original untouched


def test_defaults_construct_without_error():
    assert isinstance(RunConfig(), RunConfig)
