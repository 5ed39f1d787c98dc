import math

import numpy as np
import pytest

from src.errors import InvalidInputError, UndefinedCorrelationError
from src.services.mask_analysis import (
    MaskArchive,
    correlation_rows,
    correlation_series,
    load_mask_archive,
    mask_pearson,
    median_prev_correlation,
    ordering_rows,
    safe_pearson,
    support_f1,
)
from src.services.run_tracker import RunTracker
from src.services.schedule_manager import Phase
from src.services.trainer import MetricsRow
from src.sparsity.ot_topk import HardMask
from src.utils.vector_io import read_csv


def mask(support, d=4):
    return HardMask.from_support(support, d)


def metrics_row(epoch):
    return MetricsRow(
        epoch=epoch, phase=Phase.INTERMEDIATE, keep_fraction=0.5, beta=1.0, train_loss=0.1, eval_metric=0.2,
        sparsity=0.5, support_cost=2.0, support_size=2, sinkhorn_iters_mean=3.0, sinkhorn_iters_max=4,
        mask_corr_prev=float("nan"),
    )


def record_run(run_dir, supports, d=4):
    tracker = RunTracker(run_dir, d)
    tracker.start({"run": {"name": run_dir.name}})
    for epoch, support in enumerate(supports, start=1):
        tracker.record_epoch(metrics_row(epoch), mask(support, d), np.zeros(d))
    tracker.finish(np.zeros(d))
    return run_dir


class TestMaskPearson:
    def test_identical_masks(self):
        assert mask_pearson(mask([0, 1]), mask([0, 1])) == pytest.approx(1.0)

    def test_disjoint_supports(self):
        assert mask_pearson(mask([0, 1]), mask([2, 3]), d=4) == pytest.approx(-1.0)

    def test_overlap_of_one(self):
        assert mask_pearson(mask([0, 1]), mask([1, 2])) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_for_equal_support_sizes(self, rng):
        d, ks = 30, 8
        a = rng.choice(d, size=ks, replace=False)
        b = rng.choice(d, size=ks, replace=False)
        overlap = len(set(a) & set(b))
        expected = (overlap * d - ks ** 2) / (ks * (d - ks))
        assert mask_pearson(mask(a, d), mask(b, d)) == pytest.approx(expected)

    def test_constant_mask_is_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            mask_pearson(mask([0, 1, 2, 3]), mask([0]))
        with pytest.raises(UndefinedCorrelationError):
            mask_pearson(mask([0]), mask([]))
        assert math.isnan(safe_pearson(mask([]), mask([1])))

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            mask_pearson(mask([0], 4), mask([0], 5))
        with pytest.raises(InvalidInputError):
            mask_pearson(mask([0]), mask([1]), d=5)


def test_support_f1():
    assert support_f1([0, 1, 2], [0, 1, 2]) == 1.0
    assert support_f1([0, 1], [2, 3]) == 0.0
    assert support_f1([0, 1, 2, 3], [0, 1]) == pytest.approx(2 / 3)
    assert support_f1([], []) == 1.0


class TestArchive:
    def test_round_trip_through_run_tracker(self, tmp_path):
        run_dir = record_run(tmp_path / "run_a", [[0, 1], [1, 2], [1, 2]])
        archive = load_mask_archive(run_dir)
        assert archive.run == "run_a"
        assert archive.n_units == 4
        assert archive.epochs == [1, 2, 3]
        np.testing.assert_array_equal(archive.masks[0].indicator, [1, 1, 0, 0])

        metrics = read_csv(run_dir / "metrics.csv")
        assert [row["epoch"] for row in metrics] == ["1", "2", "3"]
        assert metrics[0]["mask_corr_prev"] == ""
        assert (run_dir / "params.txt").read_text() == "0.0000000000\n" * 4

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_mask_archive(tmp_path)

    def test_out_of_range_indices(self, tmp_path):
        run_dir = record_run(tmp_path / "run", [[0, 1]])
        (run_dir / "masks" / "epoch_0001.txt").write_text("0\n7\n")
        with pytest.raises(InvalidInputError):
            load_mask_archive(run_dir)


class TestCorrelationSeries:
    def test_identical_masks_give_all_ones(self):
        archive = MaskArchive("same", 4, [1, 2, 3], [mask([0, 2])] * 3)
        with_final, with_prev = correlation_series(archive)
        np.testing.assert_allclose(with_final, 1.0)
        np.testing.assert_allclose(with_prev, 1.0)

    def test_single_epoch_has_no_previous_series(self):
        with_final, with_prev = correlation_series(MaskArchive("one", 4, [1], [mask([0, 1])]))
        assert with_final == [pytest.approx(1.0)]
        assert with_prev == []

    def test_rows(self):
        archive = MaskArchive("r", 4, [1, 2], [mask([0, 1]), mask([2, 3])])
        rows = correlation_rows(archive)
        assert rows[0]["corr_prev"] is None
        assert rows[0]["corr_final"] == pytest.approx(-1.0)
        assert rows[1]["corr_prev"] == pytest.approx(-1.0)

    def test_dense_epochs_are_nan(self):
        archive = MaskArchive("warm", 4, [1, 2], [mask([0, 1, 2, 3]), mask([0, 1])])
        with_final, with_prev = correlation_series(archive)
        assert math.isnan(with_final[0]) and math.isnan(with_prev[0])


class TestOrdering:
    def test_median_over_window(self):
        masks = [mask([0, 1]), mask([0, 1]), mask([2, 3]), mask([2, 3]), mask([2, 3])]
        archive = MaskArchive("r", 4, [1, 2, 3, 4, 5], masks)
        # consecutive correlations at epochs 2..5: 1, -1, 1, 1
        assert median_prev_correlation(archive, (2, 5)) == pytest.approx(1.0)
        assert median_prev_correlation(archive, (2, 3)) == pytest.approx(0.0)
        assert math.isnan(median_prev_correlation(archive, (10, 20)))

    def test_rows_sorted_least_stable_first(self):
        stable = MaskArchive("stable", 4, [1, 2, 3], [mask([0, 1])] * 3)
        flipping = MaskArchive("flipping", 4, [1, 2, 3], [mask([0, 1]), mask([2, 3]), mask([0, 1])])
        empty = MaskArchive("short", 4, [1], [mask([0, 1])])
        rows = ordering_rows([stable, empty, flipping], (1, 3))
        assert [row["run"] for row in rows] == ["flipping", "stable", "short"]
        assert rows[0]["epochs"] == 2
        assert rows[2]["epochs"] == 0
