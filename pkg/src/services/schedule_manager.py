# File location: src/services/schedule_manager.py
from dataclasses import dataclass
from enum import Enum

from src.errors import ConfigError


class Phase(str, Enum):
    """Training phases, in order"""
    WARMUP = "warmup"
    INTERMEDIATE = "intermediate"
    FINE_TUNE = "fine_tune"


@dataclass(frozen=True)
class TrainingSchedule:
    """
    Keep-budget and sharpness curves over a training run.

    The keep fraction falls linearly from 1 (dense) to 1 - target_sparsity over
    the warmup phase and stays there. Beta rises linearly from beta_start to
    beta_max until the fine-tuning phase begins, where the mask is frozen.
    """
    total_epochs: int
    target_sparsity: float
    beta_max: float = 1.0
    beta_start: float = 1.0
    warmup_frac: float = 0.2
    intermediate_end_frac: float = 0.8

    def __post_init__(self):
        """Validate schedule configuration"""
        if isinstance(self.total_epochs, bool) or not isinstance(self.total_epochs, int) or self.total_epochs < 0:
            raise ConfigError(f"Invalid total_epochs: {self.total_epochs}")
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ConfigError(f"Invalid target_sparsity: {self.target_sparsity}. Must lie in [0, 1)")
        if not 0.0 < self.warmup_frac < self.intermediate_end_frac < 1.0:
            raise ConfigError(
                f"Invalid phase fractions: warmup_frac={self.warmup_frac}, "
                f"intermediate_end_frac={self.intermediate_end_frac}"
            )
        if self.beta_start < 0:
            raise ConfigError(f"Invalid beta_start: {self.beta_start}")
        if self.beta_max < self.beta_start:
            raise ConfigError(f"beta_max ({self.beta_max}) must be >= beta_start ({self.beta_start})")

    @property
    def warmup_end(self) -> float:
        return self.warmup_frac * self.total_epochs

    @property
    def fine_tune_start(self) -> float:
        return self.intermediate_end_frac * self.total_epochs

    def keep_fraction_at(self, epoch: float) -> float:
        """Fraction of the total unit cost kept at `epoch`"""
        floor = 1.0 - self.target_sparsity
        if self.warmup_end <= 0 or epoch >= self.warmup_end:
            return floor
        progress = max(epoch, 0.0) / self.warmup_end
        return 1.0 - self.target_sparsity * progress

    def beta_at(self, epoch: float) -> float:
        if self.fine_tune_start <= 0 or epoch >= self.fine_tune_start:
            return float(self.beta_max)
        progress = max(epoch, 0.0) / self.fine_tune_start
        return self.beta_start + (self.beta_max - self.beta_start) * progress

    def phase_at(self, epoch: float) -> Phase:
        if epoch < self.warmup_end:
            return Phase.WARMUP
        if epoch < self.fine_tune_start:
            return Phase.INTERMEDIATE
        return Phase.FINE_TUNE
