# File location: src/errors.py
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class SpartanError(Exception):
    """Base class for every error raised by this package"""


class InvalidInputError(SpartanError, ValueError):
    """Rejected input: bad shapes, non-finite values, budget out of range"""


class SingularBackwardError(SpartanError, ArithmeticError):
    """Soft top-k backward pass hit a degenerate denominator"""


class UndefinedCorrelationError(SpartanError, ValueError):
    """Pearson correlation requested for a constant (all-zero or all-one) mask"""


class ConfigError(SpartanError, ValueError):
    """Experiment configuration failed validation"""


@dataclass
class Checkpoint:
    """Last parameters known to produce a finite loss"""
    epoch: int
    step: int
    params: np.ndarray = field(repr=False)


class DivergenceError(SpartanError, ArithmeticError):
    """Training produced a non-finite loss"""

    def __init__(self, message: str, checkpoint: Optional[Checkpoint] = None):
        super().__init__(message)
        self.checkpoint = checkpoint
