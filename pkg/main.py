import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.config.settings import DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV, Config, LoggingConfig
from src.errors import (
    ConfigError,
    DivergenceError,
    InvalidInputError,
    SingularBackwardError,
    UndefinedCorrelationError,
)
from src.services.experiment_runner import ExperimentRunner
from src.services.mask_analysis import (
    CORRELATION_COLUMNS,
    ORDERING_COLUMNS,
    correlation_rows,
    load_mask_archive,
    ordering_rows,
)
from src.services.sinkhorn_benchmark import BENCHMARK_COLUMNS, run_benchmark
from src.sparsity.ot_topk import InitStrategy, SinkhornConfig, TopKInstance, hard_project, soft_topk_forward
from src.utils.logging_config import setup_logging
from src.utils.vector_io import read_vector, write_csv, write_vector

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DIVERGED = 3


def _default_output(filename: str) -> Path:
    return Path(os.getenv(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)) / filename


class SpartanApplication:
    """Command dispatcher for the experiment CLI"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def initialize_logging(self, logging_config: Optional[LoggingConfig] = None) -> None:
        logging_config = logging_config or LoggingConfig()
        setup_logging(
            log_dir=logging_config.log_dir,
            log_level=logging_config.level_number,
            max_bytes=logging_config.max_bytes,
            backup_count=logging_config.backup_count,
        )

    def cmd_mask(self, args: argparse.Namespace) -> int:
        values = read_vector(args.values)
        costs = read_vector(args.costs) if args.costs else None
        output = Path(args.output) if args.output else _default_output("mask.txt")

        if args.hard:
            mask = hard_project(values, args.k, costs)
            write_vector(output, mask.indicator, decimals=0)
            cost = mask.support_cost(costs if costs is not None else np.ones_like(values))
            print(f"units={mask.size} cost={cost:.6f}")
            self.logger.info(f"Hard mask with {mask.size} units written to {output}")
            return EXIT_OK

        inst = TopKInstance.create(values, k=args.k, beta=args.beta, costs=costs)
        cfg = SinkhornConfig(
            max_iterations=args.max_iterations,
            tolerance=args.tolerance,
            init_strategy=args.init,
        )
        result = soft_topk_forward(inst, cfg)
        write_vector(output, result.mask)
        print(f"budget={result.budget(inst.costs):.6f} iterations={result.iterations} "
              f"converged={str(result.converged).lower()}")
        if not result.converged:
            self.logger.warning(f"Sinkhorn stopped at max_iterations={args.max_iterations} before tolerance")
        self.logger.info(f"Soft mask written to {output}")
        return EXIT_OK

    def cmd_train(self, args: argparse.Namespace) -> int:
        config = Config.load(args.config)
        self.initialize_logging(config.logging)
        runner = ExperimentRunner(config, output_dir=args.output_dir, seed=args.seed)
        result = runner.run()
        final = result.metrics[-1] if result.metrics else None
        summary = f"run_dir={runner.run_dir} epochs={len(result.metrics)}"
        if final is not None:
            summary += f" eval_metric={final.eval_metric:.6f} sparsity={final.sparsity:.4f}"
        print(summary)
        return EXIT_OK

    def cmd_bench_sinkhorn(self, args: argparse.Namespace) -> int:
        rows = run_benchmark(
            d=args.d,
            betas=args.betas,
            strategies=args.strategies,
            trials=args.trials,
            steps=args.steps,
            workers=args.workers,
            max_iterations=args.max_iterations,
            tolerance=args.tolerance,
            seed=args.seed,
        )
        output = Path(args.output) if args.output else _default_output("sinkhorn_benchmark.csv")
        write_csv(output, rows, BENCHMARK_COLUMNS)
        print(f"rows={len(rows)} output={output}")
        return EXIT_OK

    def cmd_analyze(self, args: argparse.Namespace) -> int:
        archives = [load_mask_archive(Path(run_dir)) for run_dir in args.run_dirs]
        unit_counts = {archive.n_units for archive in archives}
        if len(unit_counts) > 1:
            raise InvalidInputError(f"Runs mask different numbers of units: {sorted(unit_counts)}")
        rows =[row for archive in archives for row in correlation_rows(archive)]
        output = Path(args.output) if args.output else Path(args.run_dirs[0]).parent / "mask_correlations.csv"
        write_csv(output, rows, CORRELATION_COLUMNS)
        self.logger.info(f"Wrote {len(rows)} correlation rows to {output}")

        if len(archives) > 1:
            window = (args.window[0], args.window[1])
            ordering = ordering_rows(archives, window)
            write_csv(output.with_name("ordering.csv"), ordering, ORDERING_COLUMNS)
            for row in ordering:
                self.logger.info(
                    f"{row['run']}: median consecutive-epoch correlation {row['median_corr_prev']:.4f} "
                    f"over epochs {window[0]}-{window[1]}"
                )
        print(f"runs={len(archives)} rows={len(rows)} output={output}")
        return EXIT_OK

    def run(self, args: argparse.Namespace) -> int:
        handlers = {
            "mask": self.cmd_mask,
            "train": self.cmd_train,
            "bench-sinkhorn": self.cmd_bench_sinkhorn,
            "analyze": self.cmd_analyze,
        }
        if args.command != "train":
            self.initialize_logging()
        try:
            return handlers[args.command](args)
        except (ConfigError, InvalidInputError, UndefinedCorrelationError) as e:
            self.logger.error(f"{args.command}: {e}")
            return EXIT_INPUT_ERROR
        except (DivergenceError, SingularBackwardError) as e:
            self.logger.error(f"{args.command}: numerical failure: {e}")
            return EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Soft top-k masking and sparse-training experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    mask = commands.add_parser("mask", help="Compute a soft or hard top-k mask for a value vector")
    mask.add_argument("values", help="File with one value per line")
    mask.add_argument("--costs", help="File with one positive cost per line (default: all ones)")
    mask.add_argument("--k", type=float, required=True, help="Budget in cost units")
    mask.add_argument("--beta", type=float, default=1.0, help="Sharpness of the soft mask")
    mask.add_argument("--hard", action="store_true", help="Hard projection instead of the soft mask")
    mask.add_argument("--max-iterations", type=int, default=100)
    mask.add_argument("--tolerance", type=float, default=0.01)
    mask.add_argument("--init", choices=[s.value for s in InitStrategy], default=InitStrategy.SORTED_THRESHOLD.value)
    mask.add_argument("--output", help="Mask file to write")

    train = commands.add_parser("train", help="Run a sparse-training experiment from a config file")
    train.add_argument("--config", required=True, help="Experiment YAML file")
    train.add_argument("--output-dir", help=f"Parent directory for the run (default: ${OUTPUT_DIR_ENV} or runs/)")
    train.add_argument("--seed", type=int, help="Override run.seed")

    bench = commands.add_parser("bench-sinkhorn", help="Compare Sinkhorn dual initializations")
    bench.add_argument("--d", type=int, required=True, help="Number of units")
    bench.add_argument("--betas", type=float, nargs="+", required=True)
    bench.add_argument("--strategies", nargs="+", choices=[s.value for s in InitStrategy],
                       default=[s.value for s in InitStrategy])
    bench.add_argument("--trials", type=int, default=5)
    bench.add_argument("--steps", type=int, default=10, help="Consecutive training steps per trial")
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--max-iterations", type=int, default=100)
    bench.add_argument("--tolerance", type=float, default=0.01)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--output", help="CSV file to write")

    analyze = commands.add_parser("analyze", help="Mask-correlation analysis of recorded runs")
    analyze.add_argument("run_dirs", nargs="+", help="Run directories written by 'train'")
    analyze.add_argument("--output", help="Correlation CSV (default: mask_correlations.csv next to the runs)")
    analyze.add_argument("--window", type=int, nargs=2, default=[10, 40], metavar=("START", "END"),
                         help="Epoch window for the run ordering")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point"""
    args = build_parser().parse_args(argv)
    app = SpartanApplication()
    try:
        return app.run(args)
    except KeyboardInterrupt:
        logging.info("Application terminated by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
