# File location: src/utils/validation.py
from typing import Any, Optional, Sequence
import logging

import numpy as np

from src.errors import InvalidInputError

logger = logging.getLogger(__name__)


class ValidationUtils:
    @staticmethod
    def validate_numeric_field(value: Any, field_name: str,
                               min_value: Optional[float] = None,
                               max_value: Optional[float] = None) -> bool:
        """
        Validate numeric field values.

        Args:
            value: Value to validate
            field_name: Name of the field (for logging)
            min_value: Optional minimum allowed value
            max_value: Optional maximum allowed value

        Returns:
            bool: True if validation passes
        """
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            logger.error(f"Field {field_name} must be numeric")
            return False

        if not np.isfinite(value):
            logger.error(f"Field {field_name} must be finite")
            return False

        if min_value is not None and value < min_value:
            logger.error(f"Field {field_name} below minimum value {min_value}")
            return False

        if max_value is not None and value > max_value:
            logger.error(f"Field {field_name} above maximum value {max_value}")
            return False

        return True

    @staticmethod
    def require_finite(array: Any, field_name: str) -> np.ndarray:
        """Return `array` as a 1-d float64 vector, rejecting NaN/inf and empty input."""
        try:
            vec = np.asarray(array, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as e:
            raise InvalidInputError(f"{field_name} is not numeric: {e}") from e
        if vec.size == 0:
            raise InvalidInputError(f"{field_name} must not be empty")
        if not np.all(np.isfinite(vec)):
            raise InvalidInputError(f"{field_name} contains non-finite entries")
        return vec

    @staticmethod
    def require_positive(array: np.ndarray, field_name: str) -> np.ndarray:
        if np.any(array <= 0):
            raise InvalidInputError(f"{field_name} must be strictly positive")
        return array

    @staticmethod
    def require_same_length(first: Sequence, second: Sequence, first_name: str, second_name: str) -> None:
        if len(first) != len(second):
            raise InvalidInputError(
                f"{first_name} has length {len(first)} but {second_name} has length {len(second)}"
            )
