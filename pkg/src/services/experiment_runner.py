# File location: src/services/experiment_runner.py
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from src.config.settings import Config, GroupConfig
from src.errors import DivergenceError
from src.models.architectures import DeskModel
from src.models.datasets import Dataset, load_dataset
from src.services.run_tracker import RunTracker
from src.services.schedule_manager import TrainingSchedule
from src.services.trainer import OptimizerConfig, SparseTrainer, TrainingResult
from src.services.update_rules import UpdateRuleState
from src.sparsity.masking import PruningGroupSpec


@dataclass
class Experiment:
    """Everything one training run needs, built from a Config"""
    model: DeskModel
    dataset: Dataset
    group: PruningGroupSpec
    rule_state: UpdateRuleState
    schedule: TrainingSchedule
    optimizer: OptimizerConfig
    seed: int


def build_group(model: DeskModel, group_config: GroupConfig) -> PruningGroupSpec:
    excluded = group_config.excluded_tensors
    if excluded is None:
        excluded = model.bias_names
    return PruningGroupSpec(
        layout=model.layout,
        kind=group_config.layout,
        block_size=group_config.block_size,
        entry_costs=dict(group_config.entry_costs),
        excluded_tensors=frozenset(excluded),
        valuation_exponent=group_config.valuation_exponent,
    )


class ExperimentRunner:
    """Builds an experiment from config and runs it, recording artifacts per epoch"""

    def __init__(self, config: Config, output_dir: Optional[Path] = None, seed: Optional[int] = None):
        self.logger = logging.getLogger(__name__)
        if seed is not None:
            config = replace(config, run=replace(config.run, seed=seed))
        self.config = config
        self.run_dir = Path(output_dir or config.run.resolved_output_dir) / config.run.name

    def build(self) -> Experiment:
        cfg = self.config
        model = DeskModel(cfg.model)
        dataset = load_dataset(cfg.dataset)
        rule_state = UpdateRuleState(
            rule=cfg.rule.name,
            beta=cfg.schedule.beta_start,
            sinkhorn=cfg.sinkhorn,
            step_size=cfg.optimizer.learning_rate,
            project_forward=cfg.rule.project_forward,
        )
        return Experiment(
            model=model,
            dataset=dataset,
            group=build_group(model, cfg.group),
            rule_state=rule_state,
            schedule=cfg.schedule,
            optimizer=cfg.optimizer,
            seed=cfg.run.seed,
        )

    def run(self) -> TrainingResult:
        experiment = self.build()
        tracker = RunTracker(self.run_dir, experiment.group.n_units)
        tracker.start(self.config.to_dict())

        trainer = SparseTrainer(
            model=experiment.model,
            dataset=experiment.dataset,
            group=experiment.group,
            rule_state=experiment.rule_state,
            schedule=experiment.schedule,
            optimizer_config=experiment.optimizer,
            seed=experiment.seed,
            on_epoch_end=tracker.record_epoch,
        )
        try:
            result = trainer.train()
        except DivergenceError as e:
            self.logger.error(f"Run {self.config.run.name} diverged: {e}")
            tracker.record_divergence(e.checkpoint)
            raise

        tracker.finish(result.params)
        return result
