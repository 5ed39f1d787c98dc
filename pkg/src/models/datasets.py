# File location: src/models/datasets.py
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.errors import ConfigError, InvalidInputError

logger = logging.getLogger(__name__)


class DatasetSource(str, Enum):
    PLANTED_SPARSE_REGRESSION = "planted_sparse_regression"
    GAUSSIAN_MIXTURE_CLASSIFICATION = "gaussian_mixture_classification"
    CSV_FILE = "csv_file"


class TaskKind(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class DatasetSpec:
    """
    Where training data comes from.

    planted_sparse_regression: y = X w* + noise with |supp(w*)| = true_support_size.
    gaussian_mixture_classification: one isotropic Gaussian per class, class means
        `separation` apart from the origin.
    csv_file: numeric feature columns plus `label_column`; `task` says how to read
        the labels.
    """
    source: DatasetSource
    d: int = 20
    n_samples: int = 1000
    true_support_size: int = 5
    noise_std: float = 0.01
    classes: int = 2
    separation: float = 2.0
    path: Optional[str] = None
    label_column: str = "label"
    task: TaskKind = TaskKind.REGRESSION
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "source", DatasetSource(self.source))
            object.__setattr__(self, "task", TaskKind(self.task))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        for name in ("d", "n_samples", "classes"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"Invalid {name}: {value}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.source is DatasetSource.PLANTED_SPARSE_REGRESSION:
            if not 1 <= self.true_support_size <= self.d:
                raise ConfigError(f"true_support_size must lie in [1, {self.d}], got {self.true_support_size}")
            if self.noise_std < 0:
                raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.source is DatasetSource.GAUSSIAN_MIXTURE_CLASSIFICATION and self.classes < 2:
            raise ConfigError("gaussian_mixture_classification needs at least 2 classes")
        if self.source is DatasetSource.CSV_FILE and not self.path:
            raise ConfigError("csv_file source requires a path")

    @property
    def task_kind(self) -> TaskKind:
        if self.source is DatasetSource.PLANTED_SPARSE_REGRESSION:
            return TaskKind.REGRESSION
        if self.source is DatasetSource.GAUSSIAN_MIXTURE_CLASSIFICATION:
            return TaskKind.CLASSIFICATION
        return self.task


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_eval: np.ndarray
    y_eval: np.ndarray
    task: TaskKind
    # planted feature support, when known
    true_support: Optional[np.ndarray] = None
    n_classes: int = 0

    @property
    def input_dim(self) -> int:
        return int(self.X_train.shape[1])

    @property
    def output_dim(self) -> int:
        if self.task is TaskKind.CLASSIFICATION:
            return self.n_classes
        return int(self.y_train.shape[1])


def _planted_regression(spec: DatasetSpec, rng: np.random.Generator):
    X = rng.standard_normal((spec.n_samples, spec.d))
    support = np.sort(rng.choice(spec.d, size=spec.true_support_size, replace=False))
    w = np.zeros(spec.d)
    w[support] = rng.choice([-1.0, 1.0], size=support.size) * rng.uniform(1.0, 2.0, size=support.size)
    y = X @ w + spec.noise_std * rng.standard_normal(spec.n_samples)
    return X, y.reshape(-1, 1), support


def _gaussian_mixture(spec: DatasetSpec, rng: np.random.Generator):
    directions = rng.standard_normal((spec.classes, spec.d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.separation * directions
    labels = rng.integers(spec.classes, size=spec.n_samples)
    X = means[labels] + rng.standard_normal((spec.n_samples, spec.d))
    return X, labels.astype(np.int64)


def _csv_dataset(spec: DatasetSpec):
    path = Path(spec.path)
    if not path.exists():
        raise InvalidInputError(f"Dataset file not found: {path}")

    frame = pd.read_csv(path)
    if spec.label_column not in frame.columns:
        raise InvalidInputError(f"{path} has no label column {spec.label_column!r}")

    features = frame.drop(columns=[spec.label_column])
    non_numeric = [col for col in features.columns if not pd.api.types.is_numeric_dtype(features[col])]
    if non_numeric:
        raise InvalidInputError(f"{path}: non-numeric feature columns {non_numeric}")
    X = features.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{path}: features contain missing or non-finite values")

    if spec.task is TaskKind.CLASSIFICATION:
        codes, _ = pd.factorize(frame[spec.label_column], sort=True)
        return X, codes.astype(np.int64)
    y = pd.to_numeric(frame[spec.label_column], errors="coerce").to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError(f"{path}: regression labels must be numeric")
    return X, y.reshape(-1, 1)


def load_dataset(spec: DatasetSpec) -> Dataset:
    """Build the dataset described by `spec` and split it into train and eval parts."""
    rng = np.random.default_rng(spec.seed)
    true_support = None

    if spec.source is DatasetSource.PLANTED_SPARSE_REGRESSION:
        X, y, true_support = _planted_regression(spec, rng)
    elif spec.source is DatasetSource.GAUSSIAN_MIXTURE_CLASSIFICATION:
        X, y = _gaussian_mixture(spec, rng)
    else:
        X, y = _csv_dataset(spec)

    n = X.shape[0]
    n_train = int(np.floor(spec.train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise InvalidInputError(f"Cannot split {n} samples with train_fraction={spec.train_fraction}")

    order = rng.permutation(n)
    train, held_out = order[:n_train], order[n_train:]
    task = spec.task_kind
    if spec.source is DatasetSource.GAUSSIAN_MIXTURE_CLASSIFICATION:
        # a small sample can miss the top class; the head still needs every output
        n_classes = spec.classes
    elif task is TaskKind.CLASSIFICATION:
        n_classes = int(y.max()) + 1
    else:
        n_classes = 0

    logger.info(f"Loaded {spec.source.value}: {n_train} train / {n - n_train} eval samples, {X.shape[1]} features")
    return Dataset(
        X_train=X[train],
        y_train=y[train],
        X_eval=X[held_out],
        y_eval=y[held_out],
        task=task,
        true_support=true_support,
        n_classes=n_classes,
    )
