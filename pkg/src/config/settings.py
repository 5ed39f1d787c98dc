# File location: src/config/settings.py
import os
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Union
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
import logging

import numpy as np
import yaml

from src.errors import ConfigError
from src.models.architectures import ModelSpec
from src.models.datasets import DatasetSpec
from src.services.schedule_manager import TrainingSchedule
from src.services.trainer import OptimizerConfig
from src.services.update_rules import RuleKind
from src.sparsity.masking import LayoutKind
from src.sparsity.ot_topk import InitStrategy, SinkhornConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SPARTAN_OUTPUT_DIR"
LOG_LEVEL_ENV = "SPARTAN_LOG_LEVEL"
DEFAULT_OUTPUT_DIR = "runs"


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"Invalid seed: {self.seed}")
        if not self.name or "/" in self.name:
            raise ConfigError(f"Invalid run name: {self.name!r}")

    @property
    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.getenv(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))


@dataclass
class RuleConfig:
    name: RuleKind = RuleKind.SPARTAN
    # ablation: evaluate the loss at the soft-masked parameters
    project_forward: bool = True

    def __post_init__(self):
        try:
            self.name = RuleKind(self.name)
        except ValueError as e:
            raise ConfigError(f"Unknown update rule: {self.name}") from e


@dataclass
class GroupConfig:
    layout: LayoutKind = LayoutKind.PER_ENTRY
    block_size: int = 1
    # None excludes every bias tensor of the model
    excluded_tensors: Optional[List[str]] = None
    # per-tensor scalar cost of one entry
    entry_costs: Dict[str, float] = field(default_factory=dict)
    valuation_exponent: float = 0.0

    def __post_init__(self):
        try:
            self.layout = LayoutKind(self.layout)
        except ValueError as e:
            raise ConfigError(f"Unknown group layout: {self.layout}") from e
        if isinstance(self.block_size, bool) or not isinstance(self.block_size, int) or self.block_size < 1:
            raise ConfigError(f"Invalid block_size: {self.block_size}")
        if self.layout is LayoutKind.PER_ENTRY and self.block_size != 1:
            raise ConfigError("block_size only applies to the blocks layout")
        if not 0.0 <= self.valuation_exponent <= 1.0:
            raise ConfigError(f"Invalid valuation_exponent: {self.valuation_exponent}. Must lie in [0, 1]")
        for name, cost in self.entry_costs.items():
            if isinstance(cost, bool) or not isinstance(cost, (int, float)) or not cost > 0:
                raise ConfigError(f"Entry cost for {name} must be a positive number, got {cost}")


@dataclass
class LoggingConfig:
    log_dir: str = "logs"
    level: str = "INFO"
    max_bytes: int = 10485760
    backup_count: int = 5

    def __post_init__(self):
        self.level = os.getenv(LOG_LEVEL_ENV, self.level).upper()
        if self.level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"Invalid logging level: {self.level}")

    @property
    def level_number(self) -> int:
        return getattr(logging, self.level)


@dataclass
class Config:
    model: ModelSpec
    dataset: DatasetSpec
    schedule: TrainingSchedule
    run: RunConfig = field(default_factory=RunConfig)
    rule: RuleConfig = field(default_factory=RuleConfig)
    group: GroupConfig = field(default_factory=GroupConfig)
    sinkhorn: SinkhornConfig = field(
        default_factory=lambda: SinkhornConfig(init_strategy=InitStrategy.SORTED_THRESHOLD)
    )
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @classmethod
    def from_dict(cls, data: Any) -> 'Config':
        if not isinstance(data, dict):
            raise ConfigError(f"Expected a mapping at the top level, got {type(data).__name__}")

        sections = {f.name: f for f in fields(cls)}
        unknown = set(data).difference(sections)
        if unknown:
            raise ConfigError(f"Unknown config sections: {sorted(unknown)}")
        missing = [name for name in ("model", "dataset", "schedule") if name not in data]
        if missing:
            raise ConfigError(f"Missing required config sections: {missing}")

        built = {}
        for name, value in data.items():
            section_type = _SECTION_TYPES[name]
            built[name] = _build_section(name, section_type, value or {})
        return cls(**built)

    @classmethod
    def load(cls, config_path: Optional[Union[str, Path]] = None) -> 'Config':
        if config_path is None:
            root_dir = Path(__file__).parent.parent.parent
            config_path = root_dir / 'config' / 'config.yaml'
        config_path = Path(config_path)

        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")

        try:
            with open(config_path) as f:
                logger.debug(f"Reading config file from: {config_path}")
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            logger.error(f"Error parsing config {config_path}: {e}")
            raise ConfigError(f"Invalid YAML in {config_path}: {e}") from e

        try:
            return cls.from_dict(data)
        except ConfigError as e:
            logger.error(f"Error loading config {config_path}: {e}")
            raise

    def to_dict(self) -> Dict[str, Any]:
        """Plain-YAML view of the resolved configuration."""
        return {f.name: _plain(asdict(getattr(self, f.name))) for f in fields(self)}


_SECTION_TYPES = {
    "model": ModelSpec,
    "dataset": DatasetSpec,
    "schedule": TrainingSchedule,
    "run": RunConfig,
    "rule": RuleConfig,
    "group": GroupConfig,
    "sinkhorn": SinkhornConfig,
    "optimizer": OptimizerConfig,
    "logging": LoggingConfig,
}


def _init_fields(section_type: type) -> FrozenSet[str]:
    return frozenset(f.name for f in fields(section_type) if f.init)


def _build_section(name: str, section_type: type, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"Section {name} must be a mapping, got {type(values).__name__}")
    unknown = set(values).difference(_init_fields(section_type))
    if unknown:
        raise ConfigError(f"Unknown keys in section {name}: {sorted(unknown)}")
    try:
        return section_type(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        # domain constructors raise InvalidInputError (a ValueError) on bad values
        raise ConfigError(f"Invalid {name} section: {e}") from e


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


# Global config instance
_config: Optional[Config] = None
_config_path: Optional[Path] = None


def get_config(config_path: Optional[Union[str, Path]] = None) -> Config:
    global _config, _config_path
    requested = Path(config_path) if config_path is not None else None
    try:
        if _config is None or (requested is not None and requested != _config_path):
            logger.debug("Loading configuration...")
            _config = Config.load(requested)
            _config_path = requested
            logger.debug("Configuration loaded successfully")
        return _config
    except Exception as e:
        logger.error(f"Failed to load configuration: {str(e)}")
        raise
