# File location: src/services/run_tracker.py
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from src.errors import Checkpoint
from src.services.trainer import METRICS_COLUMNS, MetricsRow
from src.sparsity.ot_topk import HardMask
from src.utils.vector_io import atomic_write_text, write_csv, write_indices, write_vector


class RunTracker:
    """
    Writes the artifacts of one training run as it progresses.

    Every file is replaced atomically after each epoch, so an interrupted run
    leaves a consistent directory describing the epochs completed so far:

        config.yaml            resolved configuration
        metrics.csv            one row per completed epoch
        masks/epoch_XXXX.txt   kept unit indices after each epoch
        masks/manifest.yaml    unit count and archived epochs
        params.txt             latest dense parameters
        checkpoint.txt         last finite parameters, only after a divergence
    """

    def __init__(self, run_dir: Path, n_units: int):
        self.run_dir = Path(run_dir)
        self.n_units = int(n_units)
        self.logger = logging.getLogger(__name__)
        self.rows: List[Dict[str, Any]] = []
        self.epochs: List[int] = []

    @property
    def masks_dir(self) -> Path:
        return self.run_dir / "masks"

    def start(self, resolved_config: Dict[str, Any]) -> None:
        self.masks_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.run_dir / "config.yaml", yaml.safe_dump(resolved_config, sort_keys=False))
        self._write_manifest()
        write_csv(self.run_dir / "metrics.csv", [], METRICS_COLUMNS)
        self.logger.info(f"Recording run to {self.run_dir}")

    def record_epoch(self, row: MetricsRow, mask: HardMask, params: np.ndarray) -> None:
        if mask.d != self.n_units:
            raise ValueError(f"Mask covers {mask.d} units, run tracks {self.n_units}")

        write_indices(self.masks_dir / f"epoch_{row.epoch:04d}.txt", mask.support)
        self.epochs.append(row.epoch)
        self._write_manifest()

        self.rows.append(row.as_dict())
        write_csv(self.run_dir / "metrics.csv", self.rows, METRICS_COLUMNS)
        write_vector(self.run_dir / "params.txt", params, decimals=10)
        self.logger.debug(f"Recorded epoch {row.epoch}: {mask.size} units kept")

    def finish(self, params: np.ndarray) -> None:
        write_vector(self.run_dir / "params.txt", params, decimals=10)
        self.logger.info(f"Run complete: {len(self.epochs)} epochs recorded in {self.run_dir}")

    def record_divergence(self, checkpoint: Optional[Checkpoint]) -> None:
        if checkpoint is None:
            self.logger.warning("Divergence without checkpoint; nothing to save")
            return
        write_vector(self.run_dir / "checkpoint.txt", checkpoint.params, decimals=10)
        self.logger.error(
            f"Saved last finite parameters (epoch {checkpoint.epoch}, step {checkpoint.step}) "
            f"to {self.run_dir / 'checkpoint.txt'}"
        )

    def _write_manifest(self) -> None:
        manifest = {"n_units": self.n_units, "format": "index_list", "epochs": list(self.epochs)}
        atomic_write_text(self.masks_dir / "manifest.yaml", yaml.safe_dump(manifest, sort_keys=False))
