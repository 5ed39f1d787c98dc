# File location: src/services/trainer.py
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from src.errors import Checkpoint, ConfigError, DivergenceError
from src.models.architectures import DeskModel, LossKind
from src.models.datasets import Dataset, TaskKind
from src.services.mask_analysis import safe_pearson, support_f1
from src.services.schedule_manager import Phase, TrainingSchedule
from src.services.update_rules import UpdateRuleState, compute_direction, current_mask
from src.sparsity.masking import PruningGroupSpec, expand_mask, flop_cost, realized_sparsity
from src.sparsity.ot_topk import HardMask

METRICS_COLUMNS = (
    "epoch",
    "phase",
    "keep_fraction",
    "beta",
    "train_loss",
    "eval_metric",
    "sparsity",
    "support_cost",
    "support_size",
    "sinkhorn_iters_mean",
    "sinkhorn_iters_max",
    "mask_corr_prev",
    "support_f1",
    "flop_fraction",
)


class LRSchedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0
    batch_size: int = 100
    lr_schedule: LRSchedule = LRSchedule.CONSTANT
    lr_warmup_epochs: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "lr_schedule", LRSchedule(self.lr_schedule))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not self.learning_rate > 0:
            raise ConfigError(f"Invalid learning_rate: {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"Invalid momentum: {self.momentum}. Must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError(f"Invalid weight_decay: {self.weight_decay}")
        if isinstance(self.batch_size, bool) or not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"Invalid batch_size: {self.batch_size}")
        if not isinstance(self.lr_warmup_epochs, int) or self.lr_warmup_epochs < 0:
            raise ConfigError(f"Invalid lr_warmup_epochs: {self.lr_warmup_epochs}")

    def learning_rate_at(self, epoch: int, total_epochs: int) -> float:
        """Linear warmup over lr_warmup_epochs, then constant or cosine decay to zero."""
        if epoch < self.lr_warmup_epochs:
            return self.learning_rate * (epoch + 1) / self.lr_warmup_epochs
        if self.lr_schedule is LRSchedule.CONSTANT:
            return self.learning_rate
        span = max(total_epochs - self.lr_warmup_epochs, 1)
        progress = (epoch - self.lr_warmup_epochs) / span
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * progress))


class SGDOptimizer:
    """SGD with optional Nesterov momentum; weight decay acts on the dense parameters"""

    def __init__(self, config: OptimizerConfig, size: int):
        self.config = config
        self.velocity = np.zeros(size)

    def step(self, theta: np.ndarray, direction: np.ndarray, learning_rate: float) -> np.ndarray:
        grad = direction + self.config.weight_decay * theta if self.config.weight_decay else direction
        self.velocity = self.config.momentum * self.velocity + grad
        if self.config.nesterov:
            update = grad + self.config.momentum * self.velocity
        else:
            update = self.velocity
        return theta - learning_rate * update


@dataclass
class MetricsRow:
    epoch: int
    phase: Phase
    keep_fraction: float
    beta: float
    train_loss: float
    eval_metric: float
    sparsity: float
    support_cost: float
    support_size: int
    sinkhorn_iters_mean: float
    sinkhorn_iters_max: int
    mask_corr_prev: float
    support_f1: Optional[float] = None
    flop_fraction: float = 1.0

    def as_dict(self) -> dict:
        row = asdict(self)
        row["phase"] = self.phase.value
        return row


@dataclass
class TrainingResult:
    metrics: List[MetricsRow]
    params: np.ndarray
    mask_archive: List[HardMask] = field(default_factory=list)

    @property
    def final_mask(self) -> Optional[HardMask]:
        return self.mask_archive[-1] if self.mask_archive else None


EpochCallback = Callable[[MetricsRow, HardMask, np.ndarray], None]


class SparseTrainer:
    """Mini-batch training loop driving one update rule through a TrainingSchedule"""

    def __init__(
        self,
        model: DeskModel,
        dataset: Dataset,
        group: PruningGroupSpec,
        rule_state: UpdateRuleState,
        schedule: TrainingSchedule,
        optimizer_config: OptimizerConfig,
        seed: int = 0,
        on_epoch_end: Optional[EpochCallback] = None,
    ):
        self.logger = logging.getLogger(__name__)
        self.model = model
        self.dataset = dataset
        self.group = group
        # template; every train() call works on a fresh copy in self.state
        self.rule_state = rule_state
        self.state = self._fresh_state()
        self.schedule = schedule
        self.optimizer_config = optimizer_config
        self.seed = seed
        self.on_epoch_end = on_epoch_end
        self._check_compatibility()

    def _fresh_state(self) -> UpdateRuleState:
        return replace(self.rule_state, frozen_mask=None, last_dual=None)

    def _check_compatibility(self) -> None:
        spec = self.model.spec
        if spec.input_dim != self.dataset.input_dim:
            raise ConfigError(f"Model input_dim {spec.input_dim} but dataset has {self.dataset.input_dim} features")
        if spec.output_dim != self.dataset.output_dim:
            raise ConfigError(f"Model output_dim {spec.output_dim} but dataset needs {self.dataset.output_dim}")
        wants_mse = self.dataset.task is TaskKind.REGRESSION
        if wants_mse != (spec.loss_kind is LossKind.MSE):
            raise ConfigError(f"{spec.loss_kind.value} loss does not fit a {self.dataset.task.value} dataset")
        if self.group.layout != self.model.layout:
            raise ConfigError("Pruning group layout does not match the model's parameter layout")

    def _kept_features(self, entry_mask: np.ndarray) -> np.ndarray:
        first = self.model.layout.unflatten(entry_mask)[self.model.first_layer]
        return np.flatnonzero(np.any(first != 0, axis=0))

    def _flop_fraction(self, entry_mask: np.ndarray) -> float:
        arrays = self.model.layout.unflatten(entry_mask)
        layers = self.model.dense_layers()
        masks = {layer.name: arrays[layer.name] for layer in layers}
        return flop_cost(layers, masks).fraction_of(flop_cost(layers))

    def train(self) -> TrainingResult:
        """
        Run every epoch of the schedule.

        Returns:
            TrainingResult with one MetricsRow and one hard mask per epoch, plus
            the final dense parameters

        Raises:
            DivergenceError: a loss, direction or parameter went non-finite; the
                error carries the last finite parameters
        """
        self.state = self._fresh_state()
        rng = np.random.default_rng(self.seed)
        theta = self.model.init_params(rng)
        total_epochs = self.schedule.total_epochs
        result = TrainingResult(metrics=[], params=theta)
        if total_epochs == 0:
            self.logger.info("Schedule has no epochs; returning initial parameters")
            return result

        optimizer = SGDOptimizer(self.optimizer_config, theta.size)
        X, y = self.dataset.X_train, self.dataset.y_train
        n = X.shape[0]
        batch_size = min(self.optimizer_config.batch_size, n)
        prev_mask: Optional[HardMask] = None

        self.logger.info(
            f"Training {self.model.spec.architecture.value} with {self.state.rule.value} for {total_epochs} epochs "
            f"({self.group.n_units} units, target sparsity {self.schedule.target_sparsity})"
        )

        for epoch in range(total_epochs):
            phase = self.schedule.phase_at(epoch)
            keep_fraction = self.schedule.keep_fraction_at(epoch)
            k = keep_fraction * self.group.total_cost
            self.state.beta = self.schedule.beta_at(epoch)

            if phase is Phase.FINE_TUNE and self.state.frozen_mask is None:
                self.state.freeze(current_mask(theta, k, self.group, self.state))

            learning_rate = self.optimizer_config.learning_rate_at(epoch, total_epochs)
            order = rng.permutation(n)
            losses: List[float] = []
            iterations: List[int] = []
            not_converged = 0

            for step_idx, start in enumerate(range(0, n, batch_size)):
                batch = order[start:start + batch_size]
                Xb, yb = X[batch], y[batch]
                batch_loss = []

                def grad_fn(params: np.ndarray) -> np.ndarray:
                    loss, grad = self.model.loss_and_grad(params, Xb, yb)
                    batch_loss.append(loss)
                    return grad

                step = compute_direction(theta, grad_fn, k, self.group, self.state)
                new_theta = optimizer.step(theta, step.direction, learning_rate)

                if not (np.isfinite(batch_loss[-1]) and np.all(np.isfinite(new_theta))):
                    checkpoint = Checkpoint(epoch=epoch + 1, step=step_idx, params=theta.copy())
                    self.logger.error(f"Training diverged at epoch {epoch + 1}, step {step_idx}")
                    raise DivergenceError(
                        f"Non-finite loss or parameters at epoch {epoch + 1}, step {step_idx}", checkpoint
                    )

                theta = new_theta
                losses.append(batch_loss[-1])
                if step.sinkhorn_result is not None:
                    iterations.append(step.sinkhorn_iterations)
                    not_converged += int(not step.sinkhorn_result.converged)

            if not_converged:
                self.logger.warning(
                    f"Epoch {epoch + 1}: Sinkhorn hit max_iterations in {not_converged}/{len(iterations)} steps"
                )

            mask = current_mask(theta, k, self.group, self.state)
            entry_mask = expand_mask(mask.indicator, self.group)
            forward = theta * entry_mask

            f1 = None
            if self.dataset.true_support is not None:
                f1 = support_f1(self._kept_features(entry_mask), self.dataset.true_support)

            row = MetricsRow(
                epoch=epoch + 1,
                phase=phase,
                keep_fraction=keep_fraction,
                beta=self.state.beta,
                train_loss=float(np.mean(losses)),
                eval_metric=self.model.evaluate(forward, self.dataset.X_eval, self.dataset.y_eval),
                sparsity=realized_sparsity(entry_mask, self.group),
                support_cost=mask.support_cost(self.group.costs),
                support_size=mask.size,
                sinkhorn_iters_mean=float(np.mean(iterations)) if iterations else 0.0,
                sinkhorn_iters_max=int(max(iterations)) if iterations else 0,
                mask_corr_prev=safe_pearson(prev_mask, mask) if prev_mask is not None else float("nan"),
                support_f1=f1,
                flop_fraction=self._flop_fraction(entry_mask),
            )
            result.metrics.append(row)
            result.mask_archive.append(mask)
            prev_mask = mask

            self.logger.info(
                f"Epoch {row.epoch}/{total_epochs} [{phase.value}] loss={row.train_loss:.6f} "
                f"eval={row.eval_metric:.6f} sparsity={row.sparsity:.3f} beta={row.beta:g}"
            )
            if self.on_epoch_end is not None:
                self.on_epoch_end(row, mask, theta)

        result.params = theta
        return result


def train(
    model: DeskModel,
    dataset: Dataset,
    group: PruningGroupSpec,
    rule_state: UpdateRuleState,
    schedule: TrainingSchedule,
    optimizer_config: OptimizerConfig,
    seed: int = 0,
    on_epoch_end: Optional[EpochCallback] = None,
) -> TrainingResult:
    return SparseTrainer(
        model, dataset, group, rule_state, schedule, optimizer_config, seed=seed, on_epoch_end=on_epoch_end
    ).train()
