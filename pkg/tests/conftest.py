import logging
import textwrap
from pathlib import Path

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _restore_root_logging():
    """setup_logging replaces the root handlers; put them back after each test."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CONFIG = """\
run:
  name: {name}
  seed: {seed}
model:
  architecture: linear_regression
  input_dim: 20
  output_dim: 1
dataset:
  source: planted_sparse_regression
  d: 20
  n_samples: 200
  true_support_size: 4
  noise_std: 0.01
  seed: 0
rule:
  name: {rule}
schedule:
  total_epochs: {epochs}
  target_sparsity: 0.5
  beta_start: 1.0
  beta_max: 10.0
sinkhorn:
  init_strategy: sorted_threshold
optimizer:
  learning_rate: {learning_rate}
  momentum: 0.9
  batch_size: 50
logging:
  log_dir: {log_dir}
  level: WARNING
"""


@pytest.fixture
def write_config(tmp_path):
    """Write a tiny planted-regression experiment config and return its path."""
    def _write(name="smoke", seed=0, rule="spartan", epochs=2, learning_rate=0.01, extra=""):
        path = tmp_path / f"{name}.yaml"
        text = TINY_CONFIG.format(
            name=name,
            seed=seed,
            rule=rule,
            epochs=epochs,
            learning_rate=learning_rate,
            log_dir=tmp_path / "logs",
        )
        path.write_text(text + textwrap.dedent(extra))
        return path
    return _write
