# File location: scripts/run_beta_sweep.py
"""
Script to compare mask stability of the three update rules.

Runs dual averaging, Spartan at each requested beta_max, and IMP for several
seeds from one base config, then writes the mask-correlation analysis and the
per-run ordering next to the runs.
"""
import sys
import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Sequence

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from src.config.settings import Config
from src.services.experiment_runner import ExperimentRunner
from src.services.mask_analysis import (
    CORRELATION_COLUMNS,
    ORDERING_COLUMNS,
    correlation_rows,
    load_mask_archive,
    ordering_rows,
)
from src.services.update_rules import RuleKind
from src.utils.vector_io import write_csv

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def sweep_configs(base: Config, betas: Sequence[float], seeds: Sequence[int]) -> List[Config]:
    """One config per (rule variant, seed), named so run directories don't collide."""
    variants = [("dual_averaging", RuleKind.DUAL_AVERAGING, None)]
    variants += [(f"spartan_beta{beta:g}", RuleKind.SPARTAN, beta) for beta in betas]
    variants.append(("imp", RuleKind.IMP, None))

    configs = []
    for label, rule, beta in variants:
        for seed in seeds:
            schedule = base.schedule
            if beta is not None:
                schedule = replace(schedule, beta_max=beta, beta_start=min(schedule.beta_start, beta))
            configs.append(replace(
                base,
                run=replace(base.run, name=f"{label}_seed{seed}", seed=seed),
                rule=replace(base.rule, name=rule),
                schedule=schedule,
            ))
    return configs


def run_sweep(config_file: str, output_dir: Path, betas: Sequence[float], seeds: Sequence[int],
              window: Sequence[int]) -> Path:
    base = Config.load(Path(config_file))
    run_dirs = []
    for config in sweep_configs(base, betas, seeds):
        logger.info(f"Running {config.run.name}")
        runner = ExperimentRunner(config, output_dir=output_dir)
        runner.run()
        run_dirs.append(runner.run_dir)

    archives = [load_mask_archive(run_dir) for run_dir in run_dirs]
    rows = [row for archive in archives for row in correlation_rows(archive)]
    write_csv(output_dir / "mask_correlations.csv", rows, CORRELATION_COLUMNS)

    ordering = ordering_rows(archives, (window[0], window[1]))
    write_csv(output_dir / "ordering.csv", ordering, ORDERING_COLUMNS)
    for row in ordering:
        logger.info(f"  {row['run']}: median corr_prev {row['median_corr_prev']:.4f}")
    return output_dir


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Sweep beta_max against dual averaging and IMP")
    parser.add_argument("config", help="Base experiment config (e.g., config/config.yaml)")
    parser.add_argument("--output-dir", default="runs/beta_sweep")
    parser.add_argument("--betas", type=float, nargs="+", default=[10.0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--window", type=int, nargs=2, default=[10, 40])

    args = parser.parse_args()

    try:
        run_sweep(args.config, Path(args.output_dir), args.betas, args.seeds, args.window)
    except KeyboardInterrupt:
        logger.info("Sweep terminated by user")
