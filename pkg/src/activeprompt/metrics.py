"""Annotation-efficiency metrics over trajectories and report aggregation.

Per-iteration IoU gains (deltas) are min-max normalized with a pool
shared by every strategy, seed, image, and iteration of one dataset, so
numbers are comparable across strategies and the pooled maximum lands at
exactly 1.0. Per-seed summaries: peak is the largest normalized delta
anywhere in that seed's runs; mean/iter and AUC average per-image values.
Rows aggregate mean +/- population std across seeds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import ContractViolation
from .session import Trajectory

REPORT_COLUMNS = (
    "dataset",
    "strategy",
    "seed_count",
    "peak_mean",
    "peak_std",
    "meaniter_mean",
    "meaniter_std",
    "auc_mean",
    "auc_std",
    "final_iou_mean",
    "final_iou_std",
)


@dataclass(frozen=True)
class DeltaSeries:
    """Raw per-iteration IoU gains, IoU(S_t) - IoU(S_{t-1})."""

    values: tuple[float, ...]


@dataclass(frozen=True)
class NormalizationContext:
    dataset: str
    pooled_min: float
    pooled_max: float

    def __post_init__(self):
        if self.pooled_min > self.pooled_max:
            raise ContractViolation("pooled_min must not exceed pooled_max")


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    strategy: str
    seed_count: int
    peak_mean: float
    peak_std: float
    meaniter_mean: float
    meaniter_std: float
    auc_mean: float
    auc_std: float
    final_iou_mean: float
    final_iou_std: float


@dataclass(frozen=True)
class BenchRun:
    """One trajectory in context: which dataset/image/strategy/seed produced it."""

    dataset: str
    strategy: str
    seed: int
    image_id: str
    trajectory: Trajectory
    iou0: float


def delta_iou_series(trajectory: Trajectory, iou0: float) -> DeltaSeries:
    """First difference of the per-iteration IoU sequence, prefixed by iou0."""
    series = trajectory.iou_series()
    prev = iou0
    deltas = []
    for v in series:
        deltas.append(v - prev)
        prev = v
    return DeltaSeries(tuple(deltas))


def minmax_normalize(series: DeltaSeries, ctx: NormalizationContext) -> DeltaSeries:
    span = ctx.pooled_max - ctx.pooled_min
    if span == 0.0:
        return DeltaSeries(tuple(0.0 for _ in series.values))
    return DeltaSeries(tuple((v - ctx.pooled_min) / span for v in series.values))


def peak_mean_auc(series: DeltaSeries) -> tuple[float, float, float]:
    """(max, arithmetic mean, trapezoidal area / (T-1)) of a normalized series.

    A length-1 series has AUC equal to its single value, keeping AUC on
    the same scale as the per-iteration mean.
    """
    v = series.values
    if not v:
        raise ContractViolation("series must be nonempty")
    peak = max(v)
    mean = float(np.mean(v))
    if len(v) == 1:
        auc = v[0]
    else:
        auc = float(np.trapezoid(v)) / (len(v) - 1)
    return peak, mean, auc


def expected_calibration_error(probs, labels, bins: int = 10) -> float:
    """Bin-weighted |accuracy - confidence| gap over equal-width bins.

    probs are foreground probabilities; labels the true bits. Bins are
    right-open on [0, 1) with the last bin closed; empty bins contribute 0.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ContractViolation("probs and labels must have equal length")
    if bins < 1:
        raise ContractViolation("need at least one bin")
    if p.size == 0:
        return 0.0
    idx = np.minimum((p * bins).astype(int), bins - 1)
    ece = 0.0
    n = p.size
    for b in range(bins):
        sel = idx == b
        n_b = int(sel.sum())
        if n_b == 0:
            continue
        conf = float(p[sel].mean())
        acc = float(y[sel].mean())
        ece += (n_b / n) * abs(acc - conf)
    return ece


def build_normalization_context(
    dataset: str, runs: list[BenchRun]
) -> NormalizationContext:
    """Pool raw deltas over every strategy, seed, image, and iteration."""
    pooled = []
    for run in runs:
        pooled.extend(delta_iou_series(run.trajectory, run.iou0).values)
    if not pooled:
        raise ContractViolation(f"no iterations recorded for dataset {dataset!r}")
    return NormalizationContext(dataset, min(pooled), max(pooled))


@dataclass(frozen=True)
class SeedMetrics:
    peak: float
    mean_per_iter: float
    auc: float
    final_ious: tuple[float, ...]


def seed_metrics(
    runs: list[BenchRun], ctx: NormalizationContext
) -> dict[tuple[str, int], SeedMetrics]:
    """Per (strategy, seed) summaries for one dataset's runs."""
    grouped: dict[tuple[str, int], list[BenchRun]] = {}
    for run in runs:
        grouped.setdefault((run.strategy, run.seed), []).append(run)
    out = {}
    for key, group in sorted(grouped.items()):
        peaks, means, aucs, finals = [], [], [], []
        for run in group:
            norm = minmax_normalize(delta_iou_series(run.trajectory, run.iou0), ctx)
            if not norm.values:
                continue
            p, m, a = peak_mean_auc(norm)
            peaks.append(p)
            means.append(m)
            aucs.append(a)
            finals.append(run.trajectory.iou_series()[-1])
        if not peaks:
            raise ContractViolation(f"group {key} has no usable iterations")
        out[key] = SeedMetrics(
            peak=max(peaks),
            mean_per_iter=float(np.mean(means)),
            auc=float(np.mean(aucs)),
            final_ious=tuple(finals),
        )
    return out


def aggregate_report(runs: list[BenchRun]) -> list[ReportRow]:
    """Normalize per dataset, then aggregate mean +/- population std over seeds."""
    if not runs:
        raise ContractViolation("no runs to aggregate")
    by_dataset: dict[str, list[BenchRun]] = {}
    for run in runs:
        by_dataset.setdefault(run.dataset, []).append(run)
    rows = []
    for dataset in sorted(by_dataset):
        druns = by_dataset[dataset]
        ctx = build_normalization_context(dataset, druns)
        per_seed = seed_metrics(druns, ctx)
        strategies = sorted({s for (s, _) in per_seed})
        for strat in strategies:
            seeds = sorted(seed for (s, seed) in per_seed if s == strat)
            peaks = [per_seed[(strat, sd)].peak for sd in seeds]
            means = [per_seed[(strat, sd)].mean_per_iter for sd in seeds]
            aucs = [per_seed[(strat, sd)].auc for sd in seeds]
            finals = [
                f for sd in seeds for f in per_seed[(strat, sd)].final_ious
            ]
            rows.append(
                ReportRow(
                    dataset=dataset,
                    strategy=strat,
                    seed_count=len(seeds),
                    peak_mean=float(np.mean(peaks)),
                    peak_std=float(np.std(peaks)),
                    meaniter_mean=float(np.mean(means)),
                    meaniter_std=float(np.std(means)),
                    auc_mean=float(np.mean(aucs)),
                    auc_std=float(np.std(aucs)),
                    final_iou_mean=float(np.mean(finals)),
                    final_iou_std=float(np.std(finals)),
                )
            )
    return rows


def report_to_csv(rows: list[ReportRow]) -> str:
    """Deterministic CSV: 6-decimal floats, rows sorted by (dataset, strategy)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in sorted(rows, key=lambda r: (r.dataset, r.strategy)):
        writer.writerow(
            [
                row.dataset,
                row.strategy,
                row.seed_count,
                *(
                    f"{getattr(row, c):.6f}"
                    for c in REPORT_COLUMNS[3:]
                ),
            ]
        )
    return buf.getvalue()


def report_from_csv(text: str) -> list[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ContractViolation("CSV header does not match the report schema")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(
            ReportRow(
                dataset=rec[0],
                strategy=rec[1],
                seed_count=int(rec[2]),
                **{c: float(v) for c, v in zip(REPORT_COLUMNS[3:], rec[3:])},
            )
        )
    return rows
