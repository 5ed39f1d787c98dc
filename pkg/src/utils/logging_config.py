# File location: src/utils/logging_config.py
import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Optional

RUN_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def run_log_path(log_dir: str, day: Optional[datetime] = None) -> Path:
    """Daily log file shared by every CLI command (mask, train, bench-sinkhorn, analyze)."""
    day = day or datetime.now()
    return Path(log_dir) / f"spartan_{day.strftime('%Y%m%d')}.log"


def setup_logging(
    log_dir: str = "logs",
    log_level: int = logging.INFO,
    max_bytes: int = 10485760,  # 10MB
    backup_count: int = 5
) -> Path:
    """
    Route training, Sinkhorn and analysis logs to stdout and a rotating daily file.

    Called once per CLI command with the `logging` section of the experiment config,
    so a training run, its per-epoch sparsity/beta lines and any divergence report end
    up in the same file as the benchmark or analysis that follows it.

    Args:
        log_dir: Directory for the spartan_YYYYMMDD.log files
        log_level: Root level; SPARTAN_LOG_LEVEL has already been applied by the config layer
        max_bytes: Size at which the daily file rotates
        backup_count: Rotated files to keep

    Returns:
        Path of the active log file
    """
    Path(log_dir).mkdir(parents=True, exist_ok=True)
    log_file = run_log_path(log_dir)

    formatter = logging.Formatter(RUN_LOG_FORMAT)

    file_handler = logging.handlers.RotatingFileHandler(
        log_file,
        maxBytes=max_bytes,
        backupCount=backup_count
    )
    file_handler.setFormatter(formatter)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Replace handlers so repeated CLI invocations in one process don't duplicate output
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        handler.close()

    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)
    return log_file
