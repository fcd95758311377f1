"""
Location: tests/core/test_config.py

Description: Unit tests for experiment configs and project settings.
"""

import json

import pytest

from pathformer.core.config import (
    ExperimentConfig,
    ModelConfig,
    TrainConfig,
    load_experiment_config,
    load_project_config,
    model_config_from_dict,
    resolve_thread_count,
    save_experiment_config,
)
from pathformer.utils.errors import ConfigError


def test_default_patch_sizes_slide_over_the_pool():
    """Without explicit sizes, blocks take coarse-to-fine windows of the pool."""
    config = ModelConfig()
    assert config.patch_sizes_for(0) == (12, 16, 24, 32)
    assert config.patch_sizes_for(1) == (6, 12, 16, 24)
    assert config.patch_sizes_for(2) == (2, 3, 6, 12)


def test_explicit_block_patch_sizes():
    """Listed sizes are used as given."""
    config = ModelConfig(num_blocks=2, scales_per_block=2, block_patch_sizes=((16, 24), (2, 6)))
    assert config.patch_sizes_for(1) == (2, 6)


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"top_k": 5}, "top_k"),
        ({"k_f": 60}, "k_f"),
        ({"kernels": (8, 4)}, "kernels"),
        ({"input_len": 16}, "exceeds input_len"),
        ({"no_inter": True, "no_intra": True}, "cannot both be set"),
        ({"temporal_align": "conv"}, "temporal_align"),
        ({"num_blocks": 2, "block_patch_sizes": ((2, 3, 6, 12),)}, "lists 1 blocks"),
        ({"heads": 3}, "heads"),
    ],
)
def test_model_config_validation(overrides, message):
    """Out-of-range architectures name the offending field."""
    with pytest.raises(ConfigError, match=message):
        ModelConfig(**overrides)


def test_train_config_validation():
    """Optimiser settings are range-checked."""
    with pytest.raises(ConfigError):
        TrainConfig(lr=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(loss="huber")
    with pytest.raises(ConfigError):
        TrainConfig(transfer_mode="partial")
    assert TrainConfig(lr=0.0).lr == 0.0


def test_from_dict_builds_sections():
    """Lists become tuples and the top-level seed reaches the trainer."""
    config = ExperimentConfig.from_dict({
        "dataset": {"path": "x.csv", "split": [0.6, 0.2, 0.2]},
        "model": {"pool": [2, 4, 8], "scales_per_block": 3, "input_len": 32, "kernels": [2, 4]},
        "seed": 7,
    })
    assert config.dataset.split == (0.6, 0.2, 0.2)
    assert config.model.pool == (2, 4, 8)
    assert config.train.seed == 7


@pytest.mark.parametrize(
    "payload, message",
    [
        ({"model": {}}, "dataset: missing required section"),
        ({"dataset": {"path": "x.csv"}, "extra": 1}, "extra: unknown key"),
        ({"dataset": {"path": "x.csv"}, "train": {"lr": "fast"}}, "train.lr: expected a number"),
        (
            {"dataset": {"path": "x.csv"}, "model": {"top_k": 1.5}},
            "model.top_k: expected an integer",
        ),
        (
            {"dataset": {"path": "x.csv"}, "model": {"residual": 1}},
            "model.residual: expected true/false",
        ),
        ({"dataset": {}}, "dataset.path: missing required key"),
        ({"dataset": {"path": "x.csv", "split": [0.5, 0.5]}}, "dataset.split: expected 3 entries"),
    ],
)
def test_from_dict_rejects_bad_payloads(payload, message):
    """Malformed sections raise a ConfigError naming the field."""
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig.from_dict(payload)


def test_to_dict_round_trip():
    """Serialised configs rebuild to an equal object."""
    config = ExperimentConfig.from_dict({"dataset": {"path": "x.csv"}, "model": {"top_k": 3}})
    assert ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config


def test_model_config_from_dict():
    """The checkpoint echo rebuilds a model config."""
    assert model_config_from_dict({"d_model": 8}).d_model == 8
    with pytest.raises(ConfigError):
        model_config_from_dict(None)


def test_load_experiment_config_resolves_relative_paths(tmp_path):
    """Dataset paths are taken relative to the config file."""
    (tmp_path / "inputs").mkdir()
    (tmp_path / "inputs" / "series.csv").write_text("date,a\nt0,1\n")
    (tmp_path / "configs").mkdir()
    path = tmp_path / "configs" / "exp.json"
    path.write_text(json.dumps({"dataset": {"path": "../inputs/series.csv"}}))
    config = load_experiment_config(path)
    assert config.dataset.path == str((tmp_path / "inputs" / "series.csv").resolve())

    saved = tmp_path / "saved.json"
    save_experiment_config(config, saved)
    assert load_experiment_config(saved) == config


def test_load_experiment_config_errors(tmp_path):
    """Missing files, broken JSON and missing datasets are reported."""
    with pytest.raises(FileNotFoundError):
        load_experiment_config(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"dataset\": ")
    with pytest.raises(ConfigError, match="invalid JSON at line"):
        load_experiment_config(broken)
    dangling = tmp_path / "dangling.json"
    dangling.write_text(json.dumps({"dataset": {"path": "nowhere.csv"}}))
    with pytest.raises(FileNotFoundError, match="dataset.path"):
        load_experiment_config(dangling)
    assert load_experiment_config(dangling, check_paths=False).dataset.path.endswith("nowhere.csv")


def test_project_config_is_lenient(tmp_path):
    """Missing or unreadable TOML yields empty settings."""
    assert load_project_config(tmp_path / "absent.toml") == {}
    bad = tmp_path / "bad.toml"
    bad.write_text("[tool.pathformer\n")
    assert load_project_config(bad) == {}
    good = tmp_path / "pyproject.toml"
    good.write_text("[tool.pathformer.selfcheck]\nseeds = 2\n")
    assert load_project_config(good) == {"selfcheck": {"seeds": 2}}


def test_thread_count(monkeypatch):
    """PATHFORMER_THREADS defaults to one and must be a positive integer."""
    monkeypatch.delenv("PATHFORMER_THREADS", raising=False)
    assert resolve_thread_count() == 1
    monkeypatch.setenv("PATHFORMER_THREADS", "4")
    assert resolve_thread_count() == 4
    for value in ("0", "many"):
        monkeypatch.setenv("PATHFORMER_THREADS", value)
        with pytest.raises(ConfigError):
            resolve_thread_count()
