from pathlib import Path

import pytest
import yaml

import src.config.settings as settings
from src.config.settings import (
    LOG_LEVEL_ENV,
    OUTPUT_DIR_ENV,
    Config,
    GroupConfig,
    LoggingConfig,
    RunConfig,
    get_config,
)
from src.errors import ConfigError
from src.models.architectures import Architecture
from src.services.update_rules import RuleKind
from src.sparsity.masking import LayoutKind
from src.sparsity.ot_topk import InitStrategy

REPO_ROOT = Path(__file__).resolve().parent.parent

MINIMAL = {
    "model": {"architecture": "linear_regression", "input_dim": 5, "output_dim": 1},
    "dataset": {"source": "planted_sparse_regression", "d": 5, "true_support_size": 2},
    "schedule": {"total_epochs": 3, "target_sparsity": 0.5},
}


def with_section(name, values):
    data = {key: dict(value) for key, value in MINIMAL.items()}
    data[name] = values
    return data


@pytest.mark.parametrize("name", ["config.yaml", "config-mlp-blocks.yaml"])
def test_repository_configs_load(name):
    config = Config.load(REPO_ROOT / "config" / name)
    assert config.rule.name is RuleKind.SPARTAN
    assert config.model.input_dim == config.dataset.d


def test_default_config():
    config = Config.load(REPO_ROOT / "config" / "config.yaml")
    assert config.model.architecture is Architecture.LINEAR_REGRESSION
    assert config.schedule.target_sparsity == 0.9
    assert config.sinkhorn.init_strategy is InitStrategy.SORTED_THRESHOLD
    assert config.group.layout is LayoutKind.PER_ENTRY
    assert config.group.excluded_tensors is None


def test_minimal_config_uses_defaults():
    config = Config.from_dict(MINIMAL)
    assert config.run == RunConfig()
    assert config.rule.name is RuleKind.SPARTAN
    assert config.rule.project_forward is True
    assert config.sinkhorn.max_iterations == 100
    assert config.sinkhorn.tolerance == 0.01
    assert config.optimizer.batch_size == 100


@pytest.mark.parametrize("data", [
    {**MINIMAL, "database": {"host": "localhost"}},
    with_section("rule", {"name": "spartan", "sharpness": 3}),
    {key: value for key, value in MINIMAL.items() if key != "schedule"},
    with_section("rule", {"name": "magnitude"}),
    with_section("group", {"layout": "per_entry", "block_size": 4}),
    with_section("group", {"layout": "blocks", "block_size": 0}),
    with_section("group", {"entry_costs": {"W": -1.0}}),
    with_section("sinkhorn", {"init_strategy": "warm"}),
    with_section("sinkhorn", {"max_iterations": 0}),
    with_section("schedule", {"total_epochs": 3, "target_sparsity": 1.5}),
    with_section("optimizer", {"momentum": 2.0}),
    with_section("run", {"seed": -1}),
    with_section("model", "linear_regression"),
    ["not", "a", "mapping"],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        Config.from_dict(data)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "absent.yaml")


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError):
        Config.load(path)


def test_to_dict_round_trips(tmp_path):
    config = Config.from_dict(with_section("group", {"layout": "per_entry", "excluded_tensors": ["b"]}))
    plain = config.to_dict()
    assert plain["rule"]["name"] == "spartan"
    assert plain["group"]["excluded_tensors"] == ["b"]

    path = tmp_path / "resolved.yaml"
    path.write_text(yaml.safe_dump(plain))
    assert Config.load(path).to_dict() == plain


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "elsewhere"))
    assert RunConfig().resolved_output_dir == tmp_path / "elsewhere"
    assert RunConfig(output_dir="explicit").resolved_output_dir == Path("explicit")


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
    assert LoggingConfig(level="WARNING").level == "DEBUG"
    monkeypatch.setenv(LOG_LEVEL_ENV, "chatty")
    with pytest.raises(ConfigError):
        LoggingConfig()


def test_group_config_normalizes_layout():
    assert GroupConfig(layout="blocks", block_size=2).layout is LayoutKind.BLOCKS


def test_get_config_caches_per_path(monkeypatch, tmp_path):
    monkeypatch.setattr(settings, "_config", None)
    monkeypatch.setattr(settings, "_config_path", None)
    first = tmp_path / "first.yaml"
    first.write_text(yaml.safe_dump(MINIMAL))
    second = tmp_path / "second.yaml"
    second.write_text(yaml.safe_dump(with_section("run", {"name": "other"})))

    config = get_config(first)
    assert get_config(first) is config
    assert get_config() is config
    assert get_config(second).run.name == "other"
