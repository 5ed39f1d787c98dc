import numpy as np
import pytest

from src.errors import InvalidInputError
from src.sparsity.masking import PruningGroupSpec
from src.sparsity.ot_topk import HardMask, InitStrategy, SinkhornConfig, project_parameters
from src.services.update_rules import (
    RuleKind,
    UpdateRuleState,
    compute_direction,
    current_mask,
    step_dual_averaging,
    step_imp,
    step_spartan,
)


def constant_gradient(grad, calls=None):
    grad = np.asarray(grad, dtype=np.float64)

    def grad_fn(params):
        if calls is not None:
            calls.append(params.copy())
        return grad
    return grad_fn


class TestImpStep:
    def test_masked_entry_is_frozen(self):
        theta = np.array([3.0, 1.0])
        out = step_imp(theta, constant_gradient([2.0, 5.0]), k=1, eta=0.1, group=PruningGroupSpec.for_vector(2))
        np.testing.assert_allclose(out, [2.8, 1.0])

    def test_full_budget_is_a_plain_gradient_step(self):
        theta = np.array([3.0, -1.0, 2.0])
        grad = np.array([1.0, -2.0, 0.5])
        out = step_imp(theta, constant_gradient(grad), k=3, eta=0.1, group=PruningGroupSpec.for_vector(3))
        np.testing.assert_allclose(out, theta - 0.1 * grad)

    def test_loss_is_evaluated_at_the_projection(self):
        calls = []
        theta = np.array([1.0, 2.0, -3.0])
        out = step_imp(theta, constant_gradient([10.0, 20.0, 30.0], calls), k=2, eta=0.01,
                       group=PruningGroupSpec.for_vector(3))
        np.testing.assert_array_equal(calls[0], [0.0, 2.0, -3.0])
        np.testing.assert_allclose(out, [1.0, 1.8, -3.3])


class TestDualAveragingStep:
    def test_dense_backward(self):
        theta = np.array([3.0, 1.0])
        out = step_dual_averaging(theta, constant_gradient([2.0, 5.0]), k=1, eta=0.1,
                                  group=PruningGroupSpec.for_vector(2))
        np.testing.assert_allclose(out, [2.8, 0.5])

    def test_masked_entry_crosses_threshold(self):
        # theta_2 grows by 0.5 per step: tied with theta_1 after 4 steps (lower index wins), ahead after 5
        group = PruningGroupSpec.for_vector(2)
        grad_fn = constant_gradient([0.0, -1.0])
        theta = np.array([3.0, 1.0])
        crossed_at = None
        for step in range(1, 11):
            theta = step_dual_averaging(theta, grad_fn, k=1, eta=0.5, group=group)
            if project_parameters(theta, group, 1).support.tolist() == [1]:
                crossed_at = step
                break
        assert crossed_at == 5


@pytest.mark.parametrize("rule", list(RuleKind))
def test_zero_gradient_leaves_parameters_unchanged(rule, rng):
    theta = rng.normal(size=12)
    group = PruningGroupSpec.for_vector(12)
    state = UpdateRuleState(rule=rule, beta=2.0)
    step = compute_direction(theta, constant_gradient(np.zeros(12)), 6, group, state)
    np.testing.assert_array_equal(theta - 0.1 * step.direction, theta)


@pytest.mark.parametrize("rule", list(RuleKind))
def test_forward_parameters_are_exactly_sparse(rule, rng):
    theta = rng.normal(size=20)
    group = PruningGroupSpec.for_vector(20)
    step = compute_direction(theta, constant_gradient(np.ones(20)), 5, group, UpdateRuleState(rule=rule, beta=3.0))
    assert np.count_nonzero(step.forward_params) == 5
    assert step.hard_mask.size == 5


class TestSpartanStep:
    def test_zero_beta_matches_dual_averaging_direction(self):
        theta = np.array([0.3, -2.0, 1.1, 0.7, -0.2])
        w = np.array([1.0, -0.5, 2.0, 0.25, -1.5])
        group = PruningGroupSpec.for_vector(5)
        da = compute_direction(theta, constant_gradient(w), 2, group, UpdateRuleState(rule=RuleKind.DUAL_AVERAGING))
        spartan = compute_direction(theta, constant_gradient(w), 2, group,
                                    UpdateRuleState(rule=RuleKind.SPARTAN, beta=0.0))
        np.testing.assert_allclose(spartan.direction, 0.4 * da.direction, rtol=1e-12, atol=0)
        np.testing.assert_array_equal(spartan.hard_mask.support, da.hard_mask.support)
        assert spartan.sinkhorn_iterations == 1

    def test_zero_beta_tracks_dual_averaging_with_scaled_step(self):
        # beta = 0 scales the forward parameters by k / sum(c), so the trajectories coincide
        # only for losses linear in them, with Spartan's step size divided by that factor
        rng = np.random.default_rng(11)
        costs = rng.uniform(0.5, 2.0, size=12)
        group = PruningGroupSpec.for_vector(12, costs=costs)
        k = 0.3 * costs.sum()
        eta = 0.05
        da_theta = spartan_theta = rng.normal(size=12)
        for _ in range(30):
            grad_fn = constant_gradient(rng.normal(size=12))
            da_support = project_parameters(da_theta, group, k).support
            da_theta = step_dual_averaging(da_theta, grad_fn, k, eta, group)
            spartan_theta, step = step_spartan(spartan_theta, grad_fn, k, 0.0, eta * costs.sum() / k, group)
            np.testing.assert_array_equal(step.hard_mask.support, da_support)
            np.testing.assert_allclose(spartan_theta, da_theta, rtol=1e-10, atol=1e-12)

    def test_large_beta_approaches_imp(self, rng):
        # magnitudes at least 0.5 apart
        theta = rng.permutation(np.arange(1.0, 11.0) * 0.5) * rng.choice([-1.0, 1.0], size=10)
        grad = rng.normal(size=10)
        group = PruningGroupSpec.for_vector(10)
        eta = 0.1
        imp = step_imp(theta, constant_gradient(grad), 4, eta, group)
        spartan, step = step_spartan(theta, constant_gradient(grad), 4, 1e4, eta, group)
        assert np.max(np.abs(spartan - imp)) <= 1e-3 * np.max(np.abs(imp - theta))
        np.testing.assert_array_equal(step.hard_mask.indicator, project_parameters(theta, group, 4).indicator)

    def test_tied_magnitudes_keep_lowest_indices(self):
        theta = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
        new_theta, step = step_spartan(theta, constant_gradient(np.ones(6)), 3, 2.0, 0.1,
                                       PruningGroupSpec.for_vector(6))
        np.testing.assert_array_equal(step.hard_mask.support, [0, 1, 2])
        np.testing.assert_allclose(step.sinkhorn_result.mask, 0.5)
        assert np.all(np.isfinite(new_theta))

    def test_frozen_mask_overrides_the_rule(self):
        theta = np.array([3.0, 1.0, 2.0])
        state = UpdateRuleState(rule=RuleKind.SPARTAN, beta=5.0)
        frozen = HardMask.from_support([1], 3)
        state.freeze(frozen)
        calls = []
        step = compute_direction(theta, constant_gradient([1.0, 1.0, 1.0], calls), 2,
                                 PruningGroupSpec.for_vector(3), state)
        np.testing.assert_array_equal(calls[0], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(step.direction, [0.0, 1.0, 0.0])
        assert step.sinkhorn_result is None
        assert current_mask(theta, 2, PruningGroupSpec.for_vector(3), state) is frozen

    def test_dual_cache_seeds_the_next_call(self, rng):
        theta = rng.normal(size=30)
        group = PruningGroupSpec.for_vector(30)
        state = UpdateRuleState(rule=RuleKind.SPARTAN, beta=4.0,
                                sinkhorn=SinkhornConfig(init_strategy=InitStrategy.DUAL_CACHE))
        assert state.sinkhorn_for_step().initial_dual == 0.0
        step = compute_direction(theta, constant_gradient(np.zeros(30)), 10, group, state)
        assert state.last_dual == step.sinkhorn_result.dual_mu
        assert state.sinkhorn_for_step().initial_dual == state.last_dual

    def test_soft_forward_without_projection(self, rng):
        theta = rng.normal(size=8)
        state = UpdateRuleState(rule=RuleKind.SPARTAN, beta=1.0, project_forward=False)
        step = compute_direction(theta, constant_gradient(np.ones(8)), 4, PruningGroupSpec.for_vector(8), state)
        assert np.count_nonzero(step.forward_params) == 8
        assert step.hard_mask.size == 4

    def test_negative_beta_is_rejected(self):
        with pytest.raises(InvalidInputError):
            UpdateRuleState(rule="spartan", beta=-1.0)
        with pytest.raises(InvalidInputError):
            step_spartan(np.ones(3), constant_gradient(np.ones(3)), 1, -0.5, 0.1, PruningGroupSpec.for_vector(3))

    def test_gradient_shape_mismatch_is_rejected(self):
        with pytest.raises(InvalidInputError):
            step_imp(np.ones(3), constant_gradient(np.ones(2)), 1, 0.1, PruningGroupSpec.for_vector(3))
