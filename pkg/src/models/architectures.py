# File location: src/models/architectures.py
"""
Desk-scale models with hand-derived gradients.

Parameters travel as one flat vector laid out by `DeskModel.layout`; weight
matrices are stored (output_dim, input_dim).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from src.errors import ConfigError, InvalidInputError
from src.sparsity.masking import DenseLayerSpec, ParameterLayout


class Architecture(str, Enum):
    LINEAR_REGRESSION = "linear_regression"
    LOGISTIC_REGRESSION = "logistic_regression"
    MLP_1HIDDEN = "mlp_1hidden"


class LossKind(str, Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class ModelSpec:
    architecture: Architecture
    input_dim: int
    output_dim: int
    hidden_dim: Optional[int] = None
    # mlp_1hidden only; the other architectures fix their loss
    loss: Optional[LossKind] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "architecture", Architecture(self.architecture))
            if self.loss is not None:
                object.__setattr__(self, "loss", LossKind(self.loss))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        for name in ("input_dim", "output_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"Invalid {name}: {value}")
        if self.architecture is Architecture.MLP_1HIDDEN:
            if not isinstance(self.hidden_dim, int) or self.hidden_dim < 1:
                raise ConfigError(f"mlp_1hidden needs a positive hidden_dim, got {self.hidden_dim}")
        elif self.loss is not None and self.loss is not self.loss_kind:
            raise ConfigError(f"{self.architecture.value} always uses {self.loss_kind.value} loss")
        if self.architecture is Architecture.LOGISTIC_REGRESSION and self.output_dim < 2:
            raise ConfigError("logistic_regression needs output_dim >= 2 (one logit per class)")

    @property
    def loss_kind(self) -> LossKind:
        if self.architecture is Architecture.LINEAR_REGRESSION:
            return LossKind.MSE
        if self.architecture is Architecture.LOGISTIC_REGRESSION:
            return LossKind.CROSS_ENTROPY
        return self.loss or LossKind.CROSS_ENTROPY


class DeskModel:
    """Linear, logistic or one-hidden-layer tanh network over a flat parameter vector"""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.logger = logging.getLogger(__name__)

        if spec.architecture is Architecture.MLP_1HIDDEN:
            h = spec.hidden_dim
            self.layout = ParameterLayout(
                names=("W1", "b1", "W2", "b2"),
                shapes=((h, spec.input_dim), (h,), (spec.output_dim, h), (spec.output_dim,)),
            )
        else:
            self.layout = ParameterLayout(
                names=("W", "b"),
                shapes=((spec.output_dim, spec.input_dim), (spec.output_dim,)),
            )

    @property
    def weight_names(self) -> Tuple[str, ...]:
        return tuple(name for name in self.layout.names if name.startswith("W"))

    @property
    def bias_names(self) -> Tuple[str, ...]:
        return tuple(name for name in self.layout.names if name.startswith("b"))

    @property
    def first_layer(self) -> str:
        return self.weight_names[0]

    def dense_layers(self) -> List[DenseLayerSpec]:
        return [
            DenseLayerSpec(name=name, input_dim=shape[1], output_dim=shape[0])
            for name, shape in zip(self.layout.names, self.layout.shapes)
            if name.startswith("W")
        ]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Weights ~ N(0, 1/fan_in), biases zero."""
        arrays: Dict[str, np.ndarray] = {}
        for name, shape in zip(self.layout.names, self.layout.shapes):
            if name.startswith("W"):
                arrays[name] = rng.standard_normal(shape) / np.sqrt(shape[1])
            else:
                arrays[name] = np.zeros(shape)
        return self.layout.flatten(arrays)

    def _check_batch(self, X: np.ndarray, y: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise InvalidInputError(f"Expected inputs of shape (n, {self.spec.input_dim}), got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(f"{X.shape[0]} inputs but {y.shape[0]} targets")

    def forward(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        params = self.layout.unflatten(theta)
        if self.spec.architecture is Architecture.MLP_1HIDDEN:
            hidden = np.tanh(X @ params["W1"].T + params["b1"])
            return hidden @ params["W2"].T + params["b2"]
        return X @ params["W"].T + params["b"]

    def _output_loss(self, outputs: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        """Mean loss over the batch and its gradient with respect to the outputs."""
        n = outputs.shape[0]
        if self.spec.loss_kind is LossKind.MSE:
            residual = outputs - y.reshape(outputs.shape)
            return 0.5 * float(np.sum(residual * residual)) / n, residual / n

        labels = y.astype(np.int64).reshape(-1)
        log_probs = log_softmax(outputs, axis=1)
        loss = -float(np.sum(log_probs[np.arange(n), labels])) / n
        grad = softmax(outputs, axis=1)
        grad[np.arange(n), labels] -= 1.0
        return loss, grad / n

    def loss_and_grad(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        Mean batch loss and its gradient with respect to the flat parameters.

        Args:
            theta: flat parameter vector
            X: inputs, shape (n, input_dim)
            y: regression targets (n, output_dim) or integer labels (n,)

        Returns:
            (loss, gradient) with the gradient laid out like theta
        """
        self._check_batch(X, y)
        params = self.layout.unflatten(theta)

        if self.spec.architecture is Architecture.MLP_1HIDDEN:
            hidden = np.tanh(X @ params["W1"].T + params["b1"])
            outputs = hidden @ params["W2"].T + params["b2"]
            loss, g_out = self._output_loss(outputs, y)
            g_hidden = (g_out @ params["W2"]) * (1.0 - hidden * hidden)
            grads = {
                "W1": g_hidden.T @ X,
                "b1": g_hidden.sum(axis=0),
                "W2": g_out.T @ hidden,
                "b2": g_out.sum(axis=0),
            }
        else:
            outputs = X @ params["W"].T + params["b"]
            loss, g_out = self._output_loss(outputs, y)
            grads = {"W": g_out.T @ X, "b": g_out.sum(axis=0)}

        return loss, self.layout.flatten(grads)

    def evaluate(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        """Mean squared error for regression losses, accuracy for classification."""
        self._check_batch(X, y)
        outputs = self.forward(theta, X)
        if self.spec.loss_kind is LossKind.MSE:
            residual = outputs - y.reshape(outputs.shape)
            return float(np.mean(residual * residual))
        return float(np.mean(np.argmax(outputs, axis=1) == y.astype(np.int64).reshape(-1)))
