# File location: src/sparsity/ot_topk.py
"""
Cost-sensitive soft top-k masking.

The mask m is the entropy-regularized solution of

    maximize  v.m   subject to  0 <= m <= 1,  c.m = k

computed by Sinkhorn iteration on the two dual variables (a scalar mu for the
budget and a vector nu for the box). All arithmetic stays in the log domain so
that sharpness values up to ~1e4 do not overflow.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from src.errors import InvalidInputError, SingularBackwardError
from src.sparsity.masking import PruningGroupSpec, collapse_grad, expand_mask, unit_values
from src.utils.validation import ValidationUtils

logger = logging.getLogger(__name__)

BACKWARD_DENOMINATOR_GUARD = 1e-12
# relative slack when deciding that a cumulative cost has reached the budget
_BUDGET_RTOL = 1e-12
# a converged mask may exceed 1 by at most this much
BOX_TOLERANCE = 1e-6
# below this the dual step is rounding noise in logsumexp
_DUAL_NOISE_FLOOR = 1e-9


class InitStrategy(str, Enum):
    COLD = "cold"
    DUAL_CACHE = "dual_cache"
    SORTED_THRESHOLD = "sorted_threshold"


@dataclass(frozen=True)
class SinkhornConfig:
    max_iterations: int = 100
    tolerance: float = 0.01
    init_strategy: InitStrategy = InitStrategy.COLD
    initial_dual: float = 0.0

    def __post_init__(self):
        if isinstance(self.max_iterations, bool) or not isinstance(self.max_iterations, (int, np.integer)) \
                or self.max_iterations < 1:
            raise InvalidInputError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if not ValidationUtils.validate_numeric_field(self.tolerance, "tolerance") or self.tolerance <= 0:
            raise InvalidInputError(f"tolerance must be positive, got {self.tolerance}")
        if not ValidationUtils.validate_numeric_field(self.initial_dual, "initial_dual"):
            raise InvalidInputError(f"initial_dual must be a finite number, got {self.initial_dual}")
        try:
            object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))
        except ValueError as e:
            raise InvalidInputError(f"Unknown init strategy: {self.init_strategy}") from e


@dataclass(frozen=True, eq=False)
class TopKInstance:
    values: np.ndarray
    costs: np.ndarray
    k: float
    beta: float

    def __post_init__(self):
        values = ValidationUtils.require_finite(self.values, "values")
        costs = ValidationUtils.require_finite(self.costs, "costs")
        ValidationUtils.require_same_length(values, costs, "values", "costs")
        ValidationUtils.require_positive(costs, "costs")
        if not ValidationUtils.validate_numeric_field(self.beta, "beta", min_value=0.0):
            raise InvalidInputError(f"beta must be a finite number >= 0, got {self.beta}")
        if not ValidationUtils.validate_numeric_field(self.k, "k"):
            raise InvalidInputError(f"k must be a finite number, got {self.k}")
        total = float(costs.sum())
        if not 0 < self.k <= total * (1 + _BUDGET_RTOL):
            raise InvalidInputError(f"budget k={self.k} outside (0, {total}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def create(cls, values, k: float, beta: float, costs=None) -> 'TopKInstance':
        if costs is None:
            costs = np.ones(np.size(values))
        return cls(values=values, costs=costs, k=k, beta=beta)

    @property
    def d(self) -> int:
        return int(self.values.size)

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    @property
    def ratios(self) -> np.ndarray:
        return self.values / self.costs


@dataclass(frozen=True, eq=False)
class SoftMaskResult:
    mask: np.ndarray
    dual_mu: float
    dual_nu: np.ndarray
    iterations: int
    converged: bool
    z: np.ndarray = field(repr=False)
    instance: Optional[TopKInstance] = field(default=None, repr=False)

    def budget(self, costs: np.ndarray) -> float:
        return float(np.dot(costs, self.mask))


@dataclass(frozen=True, eq=False)
class HardMask:
    indicator: np.ndarray
    threshold_index: Optional[int] = None

    @classmethod
    def from_support(cls, support, d: int) -> 'HardMask':
        indicator = np.zeros(d, dtype=np.int8)
        indicator[np.asarray(support, dtype=np.int64)] = 1
        return cls(indicator=indicator)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.indicator))

    @property
    def d(self) -> int:
        return int(self.indicator.size)

    def support_cost(self, costs: np.ndarray) -> float:
        return float(np.dot(costs, self.indicator))


def _descending_order(ratios: np.ndarray) -> np.ndarray:
    # stable sort on the negated key keeps lower indices first among ties
    return np.argsort(-ratios, kind="stable")


def threshold_dual(inst: TopKInstance) -> float:
    """
    Sorting heuristic for the initial budget dual.

    Places -mu at the hard top-k threshold of z = beta * v / c: the value of the
    unit that completes the budget in descending order. When the budget is used
    up exactly at a unit boundary the threshold lies between that unit and the
    next, so the midpoint of the two is used.
    """
    z = inst.beta * inst.ratios
    order = _descending_order(inst.ratios)
    cumulative = np.cumsum(inst.costs[order])
    pos = int(np.searchsorted(cumulative, inst.k * (1 - _BUDGET_RTOL), side="left"))
    pos = min(pos, inst.d - 1)
    at_boundary = abs(cumulative[pos] - inst.k) <= _BUDGET_RTOL * inst.k
    if at_boundary and pos + 1 < inst.d:
        return float(-0.5 * (z[order[pos]] + z[order[pos + 1]]))
    return float(-z[order[pos]])


def _initial_dual(inst: TopKInstance, cfg: SinkhornConfig) -> float:
    if cfg.init_strategy is InitStrategy.SORTED_THRESHOLD:
        return threshold_dual(inst)
    return float(cfg.initial_dual)


def _budget_mass(costs: np.ndarray, z: np.ndarray, mu: float) -> float:
    return float(np.dot(costs, expit(z + mu)))


def _feasible_start(inst: TopKInstance, z: np.ndarray, mu: float) -> float:
    """
    Raise mu until sum(c * sigmoid(z + mu)) >= k.

    The mu-update scales every mask entry by k / sum(c * sigmoid(z + mu_prev)),
    and the map mu -> mu + log k - log(mass) is increasing, so a start on this
    side of the fixed point keeps every iterate inside the box.
    """
    mass = _budget_mass(inst.costs, z, mu)
    if mass >= inst.k:
        return mu
    if mass <= 0.0:
        # every unit underflowed; centre the largest score
        mu = max(mu, -float(np.max(z)))
        mass = _budget_mass(inst.costs, z, mu)
        if mass >= inst.k:
            return mu
    shift = max(float(np.log(inst.k / mass)), np.finfo(float).eps * max(1.0, abs(mu)))
    while _budget_mass(inst.costs, z, mu + shift) < inst.k:
        shift *= 2.0
    logger.debug(f"Initial dual {mu:g} under budget (mass {mass:g} < k={inst.k:g}); raised by {shift:g}")
    return mu + shift


def _mask_distance_bound(sig: np.ndarray, costs: np.ndarray, dual_step: float) -> float:
    """
    Estimated max |m - m*| after a dual step, from the local contraction rate.

    sig is sigmoid(z + mu_prev). The mu-map contracts at rate
    1 - sum(c sig (1 - sig)) / sum(c sig), so |mu - mu*| is about
    |step| / (1 - rate), and entry i moves by sig_i (1 - sig_i) times that.
    """
    if dual_step == 0.0:
        return 0.0
    spread = sig * (1.0 - sig)
    curvature = float(np.dot(costs, spread))
    mass = float(np.dot(costs, sig))
    if curvature <= 0.0:
        # every unit saturated in floating point: no contraction information
        return abs(dual_step) * mass / float(costs.min())
    return abs(dual_step) * mass * float(spread.max()) / curvature


def soft_topk_forward(inst: TopKInstance, cfg: Optional[SinkhornConfig] = None) -> SoftMaskResult:
    """
    Soft top-k forward pass by log-domain Sinkhorn iteration.

    Args:
        inst: values, costs, budget and sharpness
        cfg: iteration limit, tolerance and dual initialization

    Returns:
        SoftMaskResult with the last iterate. `converged` needs the objective
        test, an estimated distance to the fixed point below the tolerance and
        a mask inside the box; hitting max_iterations is reported through
        `converged=False`, not raised.
    """
    cfg = cfg or SinkhornConfig()
    v, c = inst.values, inst.costs
    z = inst.beta * inst.ratios
    log_c = np.log(c)
    log_k = np.log(inst.k)

    if inst.k >= inst.total_cost * (1 - _BUDGET_RTOL):
        # c > 0 and m <= 1 leave m = 1 as the only feasible point
        logger.debug(f"Budget k={inst.k:g} saturates all {inst.d} units")
        return SoftMaskResult(
            mask=np.ones_like(v),
            dual_mu=float("inf"),
            dual_nu=np.full_like(v, -np.inf),
            iterations=1,
            converged=True,
            z=z,
            instance=inst,
        )

    # constant z (beta = 0 or all ratios tied): the first iterate is the fixed point k / sum(c)
    uniform = bool(np.ptp(z) == 0.0)

    mu = _feasible_start(inst, z, _initial_dual(inst, cfg))
    mask_prev = np.ones_like(v)
    converged = False
    iterations = 0
    nu = np.zeros_like(v)
    mask = mask_prev

    for t in range(1, cfg.max_iterations + 1):
        iterations = t
        mu_prev = mu
        nu = log_c - np.logaddexp(0.0, z + mu)
        mu = float(log_k - logsumexp(z + nu))
        mask = np.exp(z + mu + nu - log_c)

        objective_settled = abs(np.dot(v, mask - mask_prev)) < cfg.tolerance * abs(np.dot(v, mask_prev))
        distance = _mask_distance_bound(mask * np.exp(mu_prev - mu), c, mu - mu_prev)
        if uniform or (
            objective_settled
            and distance <= max(cfg.tolerance, _DUAL_NOISE_FLOOR)
            and mask.max() <= 1.0 + BOX_TOLERANCE
        ):
            converged = True
            break
        mask_prev = mask

    logger.debug(
        f"Sinkhorn d={inst.d} beta={inst.beta:g} init={cfg.init_strategy.value}: "
        f"{iterations} iterations, converged={converged}"
    )
    return SoftMaskResult(
        mask=mask,
        dual_mu=mu,
        dual_nu=nu,
        iterations=iterations,
        converged=converged,
        z=z,
        instance=inst,
    )


def soft_topk_backward(g: np.ndarray, result: SoftMaskResult, inst: TopKInstance) -> np.ndarray:
    """
    Closed-form gradient of a loss with respect to the values v, given g = dL/dm.

    The formula assumes optimal duals. Near a binary mask both a1 and k - a2
    vanish; the correction term is then dropped. A vanishing denominator with a
    non-vanishing a1 cannot come from a fixed point and is rejected.
    """
    g = ValidationUtils.require_finite(g, "g")
    ValidationUtils.require_same_length(g, inst.values, "g", "values")
    if inst.beta == 0.0:
        return np.zeros_like(g)

    m = result.mask
    c = inst.costs
    damping = m * (1.0 - m)
    a1 = float(np.dot(g, damping))
    a2 = float(np.dot(c, m * m))
    denominator = inst.k - a2

    if abs(denominator) < BACKWARD_DENOMINATOR_GUARD:
        if abs(a1) > BACKWARD_DENOMINATOR_GUARD * (1.0 + float(np.abs(g).sum())):
            raise SingularBackwardError(
                f"k - sum(c m^2) = {denominator:.3e} with a1 = {a1:.3e}; mask is not at a fixed point"
            )
        correction = 0.0
    else:
        correction = a1 / denominator

    return inst.beta * damping * (g / c - correction)


def soft_mask_parameters(theta: np.ndarray, group: PruningGroupSpec, k: float, beta: float,
                         cfg: Optional[SinkhornConfig] = None) -> Tuple[np.ndarray, SoftMaskResult]:
    """Soft top-k magnitude pruning: theta * softtopk(unit values of |theta|, k, beta)."""
    theta = ValidationUtils.require_finite(theta, "theta")
    inst = TopKInstance(values=unit_values(theta, group), costs=group.costs, k=k, beta=beta)
    result = soft_topk_forward(inst, cfg)
    return theta * expand_mask(result.mask, group), result


def masked_parameter_gradient(theta: np.ndarray, g_out: np.ndarray, result: SoftMaskResult,
                              group: PruningGroupSpec) -> np.ndarray:
    """
    Chain rule through y = theta * m(u(|theta|)).

    Args:
        theta: parameters the mask was computed from
        g_out: dL/dy
        result: output of soft_mask_parameters(theta, group, ...)
        group: the pruning group used for the mask

    Returns:
        dL/dtheta
    """
    if result.instance is None:
        raise InvalidInputError("SoftMaskResult carries no instance; use soft_mask_parameters")
    theta = ValidationUtils.require_finite(theta, "theta")
    g_out = ValidationUtils.require_finite(g_out, "g_out")
    ValidationUtils.require_same_length(theta, g_out, "theta", "g_out")

    entry_mask = expand_mask(result.mask, group)
    grad_mask = collapse_grad(theta * g_out, group)
    grad_values = soft_topk_backward(grad_mask, result, result.instance)
    grad_abs = expand_mask(group.valuation_scale * grad_values, group, fill_excluded=0.0)
    return entry_mask * g_out + np.sign(theta) * grad_abs


def fixed_point_mask(inst: TopKInstance) -> Tuple[np.ndarray, float]:
    """
    Exact soft top-k mask, independent of Sinkhorn.

    At the fixed point m = sigmoid(z + mu) with sum(c * m) = k. The budget mass
    is increasing in mu, so mu is found by bracketed root finding. Used as the
    reference for how far a stopped Sinkhorn run is from its answer.

    Returns:
        (mask, mu); mu is +inf when the budget saturates every unit
    """
    z = inst.beta * inst.ratios
    total = inst.total_cost
    if inst.k >= total * (1 - _BUDGET_RTOL):
        return np.ones(inst.d), float("inf")

    # sum(c sigmoid(z + lo)) < k e^-1 and sum(c sigmoid(z + hi)) > k
    lo = -float(np.max(z)) + float(np.log(inst.k / total)) - 1.0
    hi = -float(np.min(z)) + float(np.log(inst.k / (total - inst.k))) + 1.0
    mu = brentq(lambda m: _budget_mass(inst.costs, z, m) - inst.k, lo, hi, xtol=1e-14, maxiter=500)
    return expit(z + mu), float(mu)


def lp_topk_oracle(inst: TopKInstance) -> np.ndarray:
    """Exact optimum of the budgeted top-k LP by fractional knapsack."""
    c = inst.costs
    order = _descending_order(inst.ratios)
    c_sorted = c[order]
    cumulative = np.cumsum(c_sorted)
    before = cumulative - c_sorted

    taken = np.clip((inst.k - before) / c_sorted, 0.0, 1.0)
    taken[cumulative <= inst.k * (1 + _BUDGET_RTOL)] = 1.0

    mask = np.zeros(inst.d)
    mask[order] = taken
    return mask


def lp_objective(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.dot(values, mask))


def hard_project(values: np.ndarray, k: float, costs: Optional[np.ndarray] = None) -> HardMask:
    """
    Hard top-k selection of units.

    Uniform costs keep the round(k / c) highest-value units. General costs add
    units greedily by value/cost, skipping any unit whose cost no longer fits.
    Ties go to the lower index. `threshold_index` is the unit that completes
    the budget in sorted order (None for an empty budget).
    """
    values = ValidationUtils.require_finite(values, "values")
    costs = np.ones_like(values) if costs is None else ValidationUtils.require_finite(costs, "costs")
    ValidationUtils.require_same_length(values, costs, "values", "costs")
    ValidationUtils.require_positive(costs, "costs")

    d = values.size
    indicator = np.zeros(d, dtype=np.int8)
    if k <= 0:
        return HardMask(indicator=indicator)

    order = _descending_order(values / costs)
    total = float(costs.sum())
    if k >= total:
        indicator[:] = 1
        return HardMask(indicator=indicator, threshold_index=int(order[-1]))

    if np.all(costs == costs[0]):
        n = min(d, int(np.floor(k / costs[0] + 0.5)))
        indicator[order[:n]] = 1
        return HardMask(indicator=indicator, threshold_index=int(order[n - 1]) if n > 0 else None)

    remaining = float(k)
    min_cost = float(costs.min())
    slack = _BUDGET_RTOL * k
    for i in order:
        if remaining + slack < min_cost:
            break
        if costs[i] <= remaining + slack:
            indicator[i] = 1
            remaining -= costs[i]

    cumulative = np.cumsum(costs[order])
    pos = min(int(np.searchsorted(cumulative, k * (1 - _BUDGET_RTOL), side="left")), d - 1)
    return HardMask(indicator=indicator, threshold_index=int(order[pos]))


def project_parameters(theta: np.ndarray, group: PruningGroupSpec, k: float) -> HardMask:
    """Hard projection of parameters at the unit level, valued by |theta|."""
    return hard_project(unit_values(theta, group), k, group.costs)
