# File location: src/services/update_rules.py
"""
Parameter update rules for sparse training.

Each rule owns sparsification: it decides which parameters the loss is
evaluated at, calls the gradient callback there, and turns the result into a
direction for the dense parameter vector. The caller (the trainer's optimizer
or the step_* helpers below) applies the step.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from src.errors import InvalidInputError
from src.sparsity.masking import PruningGroupSpec, expand_mask
from src.sparsity.ot_topk import (
    HardMask,
    InitStrategy,
    SinkhornConfig,
    SoftMaskResult,
    masked_parameter_gradient,
    project_parameters,
    soft_mask_parameters,
)

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], np.ndarray]


class RuleKind(str, Enum):
    IMP = "imp"
    DUAL_AVERAGING = "dual_averaging"
    SPARTAN = "spartan"


@dataclass
class UpdateRuleState:
    """Mutable per-run state of an update rule"""
    rule: RuleKind
    beta: float = 1.0
    sinkhorn: SinkhornConfig = field(
        default_factory=lambda: SinkhornConfig(init_strategy=InitStrategy.SORTED_THRESHOLD)
    )
    frozen_mask: Optional[HardMask] = None
    last_dual: Optional[float] = None
    step_size: float = 0.1
    # False evaluates the loss at the soft-masked parameters (no hard projection)
    project_forward: bool = True

    def __post_init__(self):
        self.rule = RuleKind(self.rule)
        if self.rule is RuleKind.SPARTAN and not self.beta >= 0:
            raise InvalidInputError(f"Spartan requires beta >= 0, got {self.beta}")
        if not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")

    def sinkhorn_for_step(self) -> SinkhornConfig:
        """Sinkhorn config for the next call, seeded with the cached dual when requested"""
        if self.sinkhorn.init_strategy is InitStrategy.DUAL_CACHE and self.last_dual is not None:
            return replace(self.sinkhorn, initial_dual=self.last_dual)
        return self.sinkhorn

    def freeze(self, mask: HardMask) -> None:
        logger.info(f"Freezing {self.rule.value} mask with {mask.size} active units")
        self.frozen_mask = mask


@dataclass
class RuleStep:
    direction: np.ndarray
    forward_params: np.ndarray
    hard_mask: HardMask
    sinkhorn_result: Optional[SoftMaskResult] = None

    @property
    def sinkhorn_iterations(self) -> int:
        return self.sinkhorn_result.iterations if self.sinkhorn_result is not None else 0


def _evaluate_gradient(grad_fn: GradFn, params: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad_fn(params), dtype=np.float64).reshape(-1)
    if grad.shape != params.shape:
        raise InvalidInputError(f"Gradient callback returned {grad.size} entries for {params.size} parameters")
    return grad


def _masked_direction(theta: np.ndarray, grad_fn: GradFn, mask: HardMask, group: PruningGroupSpec) -> RuleStep:
    entry_mask = expand_mask(mask.indicator, group)
    forward = theta * entry_mask
    grad = _evaluate_gradient(grad_fn, forward)
    return RuleStep(direction=entry_mask * grad, forward_params=forward, hard_mask=mask)


def imp_direction(theta: np.ndarray, grad_fn: GradFn, k: float, group: PruningGroupSpec) -> RuleStep:
    """Loss at the projection; masked entries receive no gradient."""
    return _masked_direction(theta, grad_fn, project_parameters(theta, group, k), group)


def dual_averaging_direction(theta: np.ndarray, grad_fn: GradFn, k: float, group: PruningGroupSpec) -> RuleStep:
    """Loss at the projection; the gradient updates every entry (dense backward)."""
    mask = project_parameters(theta, group, k)
    forward = theta * expand_mask(mask.indicator, group)
    grad = _evaluate_gradient(grad_fn, forward)
    return RuleStep(direction=grad, forward_params=forward, hard_mask=mask)


def spartan_direction(theta: np.ndarray, grad_fn: GradFn, k: float, group: PruningGroupSpec,
                      state: UpdateRuleState) -> RuleStep:
    """Soft top-k mask, hard projection of the masked parameters, chain rule through the mask."""
    masked, result = soft_mask_parameters(theta, group, k, state.beta, state.sinkhorn_for_step())
    if np.isfinite(result.dual_mu):
        state.last_dual = result.dual_mu

    mask = project_parameters(masked, group, k)
    if state.project_forward:
        forward = masked * expand_mask(mask.indicator, group)
    else:
        forward = masked
    grad = _evaluate_gradient(grad_fn, forward)
    direction = masked_parameter_gradient(theta, grad, result, group)
    return RuleStep(direction=direction, forward_params=forward, hard_mask=mask, sinkhorn_result=result)


def compute_direction(theta: np.ndarray, grad_fn: GradFn, k: float, group: PruningGroupSpec,
                      state: UpdateRuleState) -> RuleStep:
    """Raw update direction of the configured rule; a frozen mask takes precedence."""
    theta = np.asarray(theta, dtype=np.float64)
    if state.frozen_mask is not None:
        return _masked_direction(theta, grad_fn, state.frozen_mask, group)
    if state.rule is RuleKind.IMP:
        return imp_direction(theta, grad_fn, k, group)
    if state.rule is RuleKind.DUAL_AVERAGING:
        return dual_averaging_direction(theta, grad_fn, k, group)
    return spartan_direction(theta, grad_fn, k, group, state)


def current_mask(theta: np.ndarray, k: float, group: PruningGroupSpec, state: UpdateRuleState) -> HardMask:
    """Hard unit mask the rule would evaluate the loss with at `theta`."""
    if state.frozen_mask is not None:
        return state.frozen_mask
    if state.rule is RuleKind.SPARTAN:
        masked, _ = soft_mask_parameters(theta, group, k, state.beta, state.sinkhorn_for_step())
        return project_parameters(masked, group, k)
    return project_parameters(theta, group, k)


def step_imp(theta: np.ndarray, grad_fn: GradFn, k: float, eta: float, group: PruningGroupSpec) -> np.ndarray:
    return theta - eta * imp_direction(theta, grad_fn, k, group).direction


def step_dual_averaging(theta: np.ndarray, grad_fn: GradFn, k: float, eta: float,
                        group: PruningGroupSpec) -> np.ndarray:
    return theta - eta * dual_averaging_direction(theta, grad_fn, k, group).direction


def step_spartan(theta: np.ndarray, grad_fn: GradFn, k: float, beta: float, eta: float,
                 group: PruningGroupSpec, state: Optional[UpdateRuleState] = None) -> Tuple[np.ndarray, RuleStep]:
    """
    One Spartan update.

    Args:
        theta: dense parameters
        grad_fn: gradient of the loss at given parameters
        k: keep budget in unit-cost terms
        beta: sharpness of the soft mask
        eta: step size
        group: pruning group
        state: rule state (dual cache, frozen mask); a fresh one is used when omitted

    Returns:
        New parameters and the step diagnostics (Sinkhorn result, realized hard mask)
    """
    if state is None:
        state = UpdateRuleState(rule=RuleKind.SPARTAN, beta=beta, step_size=eta)
    else:
        state.beta = beta
    step = compute_direction(theta, grad_fn, k, group, state)
    return theta - eta * step.direction, step
