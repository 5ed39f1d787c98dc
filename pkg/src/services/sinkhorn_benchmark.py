# File location: src/services/sinkhorn_benchmark.py
"""
Iterations-to-tolerance benchmark for the Sinkhorn dual initializations.

Each trial simulates a short run of consecutive training steps: the unit
values start as |N(0, 1)| and drift a little between steps, which is the
regime where caching the previous dual pays off. Trials are independent and
run on a thread pool; results are collected in trial order.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.errors import InvalidInputError
from src.sparsity.ot_topk import InitStrategy, SinkhornConfig, TopKInstance, fixed_point_mask, soft_topk_forward

logger = logging.getLogger(__name__)

BENCHMARK_COLUMNS = (
    "d",
    "beta",
    "strategy",
    "trials",
    "steps",
    "median_iterations",
    "worst_iterations",
    "median_wall_time_s",
    "converged_fraction",
    "mask_deviation",
    "fixed_point_deviation",
)


@dataclass(frozen=True)
class BenchmarkConfig:
    d: int
    betas: Tuple[float, ...]
    strategies: Tuple[InitStrategy, ...] = tuple(InitStrategy)
    trials: int = 5
    steps: int = 10
    keep_fraction: float = 0.1
    drift: float = 0.01
    max_iterations: int = 100
    tolerance: float = 0.01
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        try:
            object.__setattr__(self, "strategies", tuple(InitStrategy(s) for s in self.strategies))
        except ValueError as e:
            raise InvalidInputError(f"Unknown init strategy: {e}") from e
        for name in ("d", "trials", "steps", "workers"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.betas or any(b < 0 for b in self.betas):
            raise InvalidInputError(f"betas must be a non-empty list of values >= 0, got {self.betas}")
        if not self.strategies:
            raise InvalidInputError("At least one init strategy is required")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise InvalidInputError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")


@dataclass
class TrialOutcome:
    iterations: List[int]
    converged: List[bool]
    wall_time_s: float
    final_mask: np.ndarray = field(repr=False)
    # max |m - m*| of the final step against the root-found fixed point
    fixed_point_deviation: float = 0.0


class SinkhornBenchmark:
    def __init__(self, config: BenchmarkConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)

    def _trial_values(self, trial: int) -> List[np.ndarray]:
        """Value sequence of one trial; identical for every beta and strategy."""
        rng = np.random.default_rng([self.config.seed, trial])
        values = np.abs(rng.standard_normal(self.config.d))
        sequence = [values]
        for _ in range(self.config.steps - 1):
            values = np.abs(values + self.config.drift * rng.standard_normal(self.config.d))
            sequence.append(values)
        return sequence

    def _run_trial(self, trial: int, beta: float, strategy: InitStrategy) -> TrialOutcome:
        k = self.config.keep_fraction * self.config.d
        cfg = SinkhornConfig(
            max_iterations=self.config.max_iterations,
            tolerance=self.config.tolerance,
            init_strategy=strategy,
        )
        iterations, converged = [], []
        mask = instance = None
        start = time.perf_counter()
        for values in self._trial_values(trial):
            instance = TopKInstance.create(values, k=k, beta=beta)
            result = soft_topk_forward(instance, cfg)
            iterations.append(result.iterations)
            converged.append(result.converged)
            mask = result.mask
            if strategy is InitStrategy.DUAL_CACHE and np.isfinite(result.dual_mu):
                cfg = SinkhornConfig(
                    max_iterations=cfg.max_iterations,
                    tolerance=cfg.tolerance,
                    init_strategy=strategy,
                    initial_dual=result.dual_mu,
                )
        wall = time.perf_counter() - start
        exact, _ = fixed_point_mask(instance)
        return TrialOutcome(
            iterations=iterations,
            converged=converged,
            wall_time_s=wall,
            final_mask=mask,
            fixed_point_deviation=float(np.max(np.abs(mask - exact))),
        )

    def _run_cell(self, beta: float, strategy: InitStrategy) -> List[TrialOutcome]:
        trials = range(self.config.trials)
        if self.config.workers == 1:
            return [self._run_trial(t, beta, strategy) for t in trials]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(lambda t: self._run_trial(t, beta, strategy), trials))

    def run(self) -> List[Dict[str, object]]:
        """
        One row per (beta, strategy) with median iterations and wall time over trials.

        mask_deviation is the largest elementwise difference between this
        strategy's final-step masks and those of the first strategy listed;
        fixed_point_deviation compares them with the exact fixed point instead,
        so a run that stops early shows up even when every strategy stops early.
        """
        rows = []
        for beta in self.config.betas:
            reference = None
            for strategy in self.config.strategies:
                outcomes = self._run_cell(beta, strategy)
                masks = [o.final_mask for o in outcomes]
                if reference is None:
                    reference = masks
                deviation = max(float(np.max(np.abs(a - b))) for a, b in zip(masks, reference))

                per_trial = [float(np.mean(o.iterations)) for o in outcomes]
                all_converged = [c for o in outcomes for c in o.converged]
                row = {
                    "d": self.config.d,
                    "beta": beta,
                    "strategy": strategy.value,
                    "trials": self.config.trials,
                    "steps": self.config.steps,
                    "median_iterations": float(np.median(per_trial)),
                    "worst_iterations": int(max(max(o.iterations) for o in outcomes)),
                    "median_wall_time_s": float(np.median([o.wall_time_s for o in outcomes])),
                    "converged_fraction": float(np.mean(all_converged)),
                    "mask_deviation": deviation,
                    "fixed_point_deviation": max(o.fixed_point_deviation for o in outcomes),
                }
                rows.append(row)
                self.logger.info(
                    f"beta={beta:g} {strategy.value}: median {row['median_iterations']:.1f} iterations, "
                    f"{row['median_wall_time_s'] * 1e3:.2f} ms per trial"
                )
                if row["converged_fraction"] < 1.0:
                    self.logger.warning(
                        f"beta={beta:g} {strategy.value}: {1 - row['converged_fraction']:.0%} of calls "
                        f"stopped at max_iterations={self.config.max_iterations}"
                    )
        return rows


def run_benchmark(d: int, betas: Sequence[float], strategies: Sequence[str], trials: int,
                  **kwargs) -> List[Dict[str, object]]:
    config = BenchmarkConfig(d=d, betas=tuple(betas), strategies=tuple(strategies), trials=trials, **kwargs)
    return SinkhornBenchmark(config).run()
