# File location: src/services/mask_analysis.py
"""
Mask-stability analysis over archived training runs.

A run directory written by RunTracker holds one index file per epoch under
masks/ plus a manifest naming the number of units. From it this module derives
the Pearson correlation of each epoch's mask with the final mask and with the
previous epoch's mask, and compares runs by the median consecutive-epoch
correlation over a window of epochs.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.stats import pearsonr

from src.errors import InvalidInputError, UndefinedCorrelationError
from src.sparsity.ot_topk import HardMask
from src.utils.vector_io import read_indices

logger = logging.getLogger(__name__)

CORRELATION_COLUMNS = ("run", "epoch", "corr_final", "corr_prev")
ORDERING_COLUMNS = ("run", "window_start", "window_end", "epochs", "median_corr_prev")


def mask_pearson(mask_a: HardMask, mask_b: HardMask, d: Optional[int] = None) -> float:
    """
    Pearson correlation of two binary masks viewed as 0/1 vectors.

    Raises:
        InvalidInputError: lengths differ from each other or from `d`
        UndefinedCorrelationError: either mask is all zeros or all ones
    """
    a = np.asarray(mask_a.indicator, dtype=np.float64)
    b = np.asarray(mask_b.indicator, dtype=np.float64)
    if a.size != b.size:
        raise InvalidInputError(f"Masks have different lengths: {a.size} and {b.size}")
    if d is not None and a.size != d:
        raise InvalidInputError(f"Masks have length {a.size}, expected {d}")
    for name, vec in (("first", a), ("second", b)):
        if vec.size < 2 or vec.min() == vec.max():
            raise UndefinedCorrelationError(f"Correlation undefined: {name} mask is constant")
    return float(pearsonr(a, b)[0])


def safe_pearson(mask_a: HardMask, mask_b: HardMask) -> float:
    """mask_pearson, with NaN standing in for an undefined correlation."""
    try:
        return mask_pearson(mask_a, mask_b)
    except UndefinedCorrelationError:
        return float("nan")


def support_f1(support: Sequence[int], true_support: Sequence[int]) -> float:
    """F1 score of a recovered support against the planted one."""
    predicted = set(int(i) for i in support)
    truth = set(int(i) for i in true_support)
    if not predicted and not truth:
        return 1.0
    hits = len(predicted & truth)
    return 2.0 * hits / (len(predicted) + len(truth))


@dataclass
class MaskArchive:
    run: str
    n_units: int
    epochs: List[int] = field(default_factory=list)
    masks: List[HardMask] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.masks)


def load_mask_archive(run_dir: Path) -> MaskArchive:
    """Read masks/manifest.yaml and the per-epoch index files of a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "masks" / "manifest.yaml"
    if not manifest_path.exists():
        raise InvalidInputError(f"No mask manifest in {run_dir}")

    with open(manifest_path) as f:
        manifest = yaml.safe_load(f) or {}
    try:
        n_units = int(manifest["n_units"])
        epochs = [int(e) for e in manifest.get("epochs", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed mask manifest {manifest_path}: {e}") from e

    archive = MaskArchive(run=run_dir.name, n_units=n_units)
    for epoch in epochs:
        support = read_indices(run_dir / "masks" / f"epoch_{epoch:04d}.txt")
        if support.size and (support.min() < 0 or support.max() >= n_units):
            raise InvalidInputError(f"Epoch {epoch} of {run_dir} indexes outside [0, {n_units})")
        archive.epochs.append(epoch)
        archive.masks.append(HardMask.from_support(support, n_units))

    logger.debug(f"Loaded {len(archive)} masks over {n_units} units from {run_dir}")
    return archive


def correlation_series(archive: MaskArchive) -> Tuple[List[float], List[float]]:
    """
    Per-epoch correlation with the final mask, and with the previous epoch.

    The second series starts at the archive's second epoch, so a single-epoch
    archive yields an empty one. Undefined correlations are NaN.
    """
    if not archive.masks:
        return [], []
    final = archive.masks[-1]
    with_final = [safe_pearson(mask, final) for mask in archive.masks]
    with_prev = [safe_pearson(prev, cur) for prev, cur in zip(archive.masks, archive.masks[1:])]
    return with_final, with_prev


def correlation_rows(archive: MaskArchive) -> List[Dict[str, object]]:
    with_final, with_prev = correlation_series(archive)
    rows = []
    for i, epoch in enumerate(archive.epochs):
        rows.append({
            "run": archive.run,
            "epoch": epoch,
            "corr_final": with_final[i],
            "corr_prev": with_prev[i - 1] if i > 0 else None,
        })
    return rows


def median_prev_correlation(archive: MaskArchive, window: Tuple[int, int]) -> float:
    """Median of the consecutive-epoch correlation over epochs window[0]..window[1] inclusive."""
    start, end = window
    _, with_prev = correlation_series(archive)
    values = [
        corr for epoch, corr in zip(archive.epochs[1:], with_prev)
        if start <= epoch <= end and not np.isnan(corr)
    ]
    if not values:
        return float("nan")
    return float(np.median(values))


def ordering_rows(archives: Sequence[MaskArchive], window: Tuple[int, int]) -> List[Dict[str, object]]:
    """One row per run, sorted by median consecutive-epoch correlation (least stable first)."""
    start, end = window
    rows = []
    for archive in archives:
        in_window = sum(1 for e in archive.epochs[1:] if start <= e <= end)
        rows.append({
            "run": archive.run,
            "window_start": start,
            "window_end": end,
            "epochs": in_window,
            "median_corr_prev": median_prev_correlation(archive, window),
        })
    rows.sort(key=lambda r: (np.isnan(r["median_corr_prev"]), r["median_corr_prev"]))
    return rows
