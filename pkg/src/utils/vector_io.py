# File location: src/utils/vector_io.py
import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Union

import numpy as np

from src.errors import InvalidInputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write `text` to `path` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_vector(path: PathLike) -> np.ndarray:
    """Read a newline-delimited decimal vector. Blank lines and `#` comments are skipped."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"Vector file not found: {path}")

    values: List[float] = []
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError as e:
                raise InvalidInputError(f"{path}:{line_no}: not a decimal number: {line!r}") from e

    if not values:
        raise InvalidInputError(f"Vector file is empty: {path}")
    logger.debug(f"Read {len(values)} values from {path}")
    return np.asarray(values, dtype=np.float64)


def format_vector(values: Iterable[float], decimals: int = 6) -> str:
    return "".join(f"{float(v):.{decimals}f}\n" for v in values)


def write_vector(path: PathLike, values: Iterable[float], decimals: int = 6) -> None:
    atomic_write_text(path, format_vector(values, decimals))


def read_indices(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"Index file not found: {path}")
    with open(path) as f:
        indices = [int(line) for line in (raw.strip() for raw in f) if line and not line.startswith("#")]
    return np.asarray(indices, dtype=np.int64)


def write_indices(path: PathLike, indices: Iterable[int]) -> None:
    atomic_write_text(path, "".join(f"{int(i)}\n" for i in indices))


def format_csv(rows: Sequence[Mapping[str, object]], fieldnames: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({name: _csv_cell(row.get(name)) for name in fieldnames})
    return buf.getvalue()


def write_csv(path: PathLike, rows: Sequence[Mapping[str, object]], fieldnames: Sequence[str]) -> None:
    atomic_write_text(path, format_csv(rows, fieldnames))


def read_csv(path: PathLike) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _csv_cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        return f"{float(value):.10g}"
    return value
