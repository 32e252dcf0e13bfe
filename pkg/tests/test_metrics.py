"""Delta-IoU metrics, normalization, ECE, and report aggregation."""

import numpy as np
import pytest

from activeprompt.core import ContractViolation
from activeprompt.metrics import (
    BenchRun,
    DeltaSeries,
    NormalizationContext,
    aggregate_report,
    build_normalization_context,
    delta_iou_series,
    expected_calibration_error,
    minmax_normalize,
    peak_mean_auc,
    report_from_csv,
    report_to_csv,
    seed_metrics,
)
from activeprompt.session import StepRecord, StopReason, Trajectory


def traj_with_ious(ious, strategy="bald", seed=0):
    records = tuple(
        StepRecord(
            t=i + 1,
            q=(i, 0),
            label=1,
            iou=v,
            max_mi=None,
            h_total=None,
            mask_sha256="0" * 64,
        )
        for i, v in enumerate(ious)
    )
    return Trajectory(records, StopReason.BUDGET_EXHAUSTED, strategy, seed)


class TestDeltaSeries:
    def test_first_differences(self):
        t = traj_with_ious([0.4, 0.6, 0.6])
        assert delta_iou_series(t, 0.0).values == (0.4, pytest.approx(0.2), 0.0)

    def test_constant_iou_zero_deltas(self):
        t = traj_with_ious([0.5, 0.5, 0.5])
        assert delta_iou_series(t, 0.5).values == (0.0, 0.0, 0.0)

    def test_single_iteration(self):
        t = traj_with_ious([0.7])
        assert len(delta_iou_series(t, 0.0).values) == 1

    def test_missing_iou_rejected(self):
        records = (
            StepRecord(1, (0, 0), 1, None, None, None, "0" * 64),
        )
        t = Trajectory(records, StopReason.BUDGET_EXHAUSTED, "human_replay", 0)
        with pytest.raises(ContractViolation):
            delta_iou_series(t, 0.0)

    def test_telescoping_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            ious = rng.random(int(rng.integers(1, 16)))
            iou0 = float(rng.random())
            deltas = delta_iou_series(traj_with_ious(list(ious)), iou0).values
            assert abs(sum(deltas) - (ious[-1] - iou0)) < 1e-12


class TestNormalize:
    def test_hand_case(self):
        s = DeltaSeries((0.1, 0.3, 0.2))
        ctx = NormalizationContext("d", 0.0, 0.4)
        assert minmax_normalize(s, ctx).values == (
            pytest.approx(0.25),
            pytest.approx(0.75),
            pytest.approx(0.5),
        )

    def test_pooled_max_hits_one(self):
        s = DeltaSeries((0.05, 0.4))
        ctx = NormalizationContext("d", 0.0, 0.4)
        assert minmax_normalize(s, ctx).values[-1] == 1.0

    def test_degenerate_pool(self):
        s = DeltaSeries((0.2, 0.2))
        ctx = NormalizationContext("d", 0.2, 0.2)
        assert minmax_normalize(s, ctx).values == (0.0, 0.0)


class TestPeakMeanAuc:
    def test_hand_trapezoid(self):
        peak, mean, auc = peak_mean_auc(DeltaSeries((0.2, 0.8, 0.5)))
        assert peak == 0.8
        assert mean == pytest.approx(0.5)
        assert auc == pytest.approx(0.575)

    def test_flat_series(self):
        peak, mean, auc = peak_mean_auc(DeltaSeries((0.3, 0.3, 0.3)))
        assert peak == mean == auc == pytest.approx(0.3)

    def test_single_value(self):
        assert peak_mean_auc(DeltaSeries((1.0,))) == (1.0, 1.0, 1.0)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            peak_mean_auc(DeltaSeries(()))


class TestECE:
    def test_degenerate_perfect(self):
        assert expected_calibration_error([1.0] * 5, [1] * 5) == 0.0

    def test_two_point_hand_case(self):
        # (0.95, correct) and (0.55, incorrect) with 10 bins
        ece = expected_calibration_error([0.95, 0.55], [1, 0], bins=10)
        assert ece == pytest.approx(0.30, abs=1e-12)

    def test_empty_bins_contribute_zero(self):
        # all mass in one bin; the other nine are empty
        ece = expected_calibration_error([0.55, 0.55], [1, 0], bins=10)
        assert ece == pytest.approx(0.05, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            expected_calibration_error([0.5], [1, 0])

    def test_calibrated_synthetic_small(self):
        rng = np.random.default_rng(1)
        p = rng.random(20_000)
        y = (rng.random(20_000) < p).astype(int)
        assert expected_calibration_error(p, y, bins=10) < 0.02

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(1, 50))
            p = rng.random(n)
            y = rng.integers(0, 2, n)
            assert 0.0 <= expected_calibration_error(p, y) <= 1.0


def make_runs():
    """Two datasets x two strategies x two seeds, one image each."""
    runs = []
    series = {
        ("a", "bald", 0): [0.5, 0.7],
        ("a", "bald", 1): [0.45, 0.72],
        ("a", "random", 0): [0.2, 0.3],
        ("a", "random", 1): [0.25, 0.28],
        ("b", "bald", 0): [0.6, 0.9],
        ("b", "bald", 1): [0.5, 0.8],
        ("b", "random", 0): [0.3, 0.35],
        ("b", "random", 1): [0.2, 0.4],
    }
    for (ds, strat, seed), ious in series.items():
        runs.append(
            BenchRun(ds, strat, seed, "img0", traj_with_ious(ious, strat, seed), 0.0)
        )
    return runs


class TestAggregate:
    def test_row_count_and_sort(self):
        rows = aggregate_report(make_runs())
        assert len(rows) == 4
        keys = [(r.dataset, r.strategy) for r in rows]
        assert keys == sorted(keys)

    def test_single_seed_zero_std(self):
        runs = [r for r in make_runs() if r.seed == 0]
        rows = aggregate_report(runs)
        for r in rows:
            assert r.peak_std == 0.0
            assert r.seed_count == 1

    def test_some_seed_peak_is_exactly_one(self):
        runs = make_runs()
        by_ds = {}
        for r in runs:
            by_ds.setdefault(r.dataset, []).append(r)
        for ds, druns in by_ds.items():
            ctx = build_normalization_context(ds, druns)
            per_seed = seed_metrics(druns, ctx)
            assert any(m.peak == 1.0 for m in per_seed.values())

    def test_csv_round_trip(self):
        rows = aggregate_report(make_runs())
        text = report_to_csv(rows)
        back = report_from_csv(text)
        assert [(r.dataset, r.strategy, r.seed_count) for r in back] == [
            (r.dataset, r.strategy, r.seed_count) for r in rows
        ]
        for a, b in zip(back, rows):
            assert a.peak_mean == pytest.approx(b.peak_mean, abs=1e-6)

    def test_csv_header_schema(self):
        text = report_to_csv(aggregate_report(make_runs()))
        header = text.splitlines()[0]
        assert header == (
            "dataset,strategy,seed_count,peak_mean,peak_std,meaniter_mean,"
            "meaniter_std,auc_mean,auc_std,final_iou_mean,final_iou_std"
        )

    def test_bad_header_rejected(self):
        with pytest.raises(ContractViolation):
            report_from_csv("nope,nope\n1,2\n")

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            aggregate_report([])
