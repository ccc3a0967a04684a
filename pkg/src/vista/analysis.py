"""Trajectory-deviation diagnostics over a run's recorded coverage history.

All functions read recorded history only: per-epoch ``(epoch, val_accuracy,
coverage)`` triples and the per-epoch sweep snapshots ``{checkpoint: delta}``.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from vista.coverage import CoverageSet, observe_sweep, verify_claim1


class DeviationGap(NamedTuple):
    gap: float
    intermediate_accuracy: float
    structural_residual: float


def deviation_gap(c_e: CoverageSet, c_final: CoverageSet, val_size: int) -> DeviationGap:
    """Fraction of validation points correct at epoch e but wrong at the final epoch."""
    if len(c_e) != len(c_final) or len(c_e) != val_size:
        raise ValueError("coverage sets must both have length |V|")
    lost = int(np.count_nonzero(c_e.bits & ~c_final.bits))
    kept = int(np.count_nonzero(c_e.bits & c_final.bits))
    return DeviationGap(lost / val_size, c_e.count() / val_size, kept / val_size)


@dataclass
class TrajectoryReport:
    epochs: list[int]
    intermediate_accuracy: list[float]
    structural_residual: list[float]
    deviation_gap: list[float]
    correct_counts: list[int]
    retained_counts: list[int]
    lost_counts: list[int]
    mean_deviation_gap: float
    lifespans: dict[int, int] = field(default_factory=dict)
    eot_gains: dict[int, int] = field(default_factory=dict)
    max_active_set: int = 0


def checkpoint_lifespans(sweep_history: Sequence[Mapping[int, int]]) -> dict[int, int]:
    """Epochs for which each checkpoint keeps positive marginal credit after its own.

    ``sweep_history[t - 1]`` maps every checkpoint ``s <= t`` to its credit at
    epoch ``t``.
    """
    last_positive: dict[int, int] = {}
    for t, snapshot in enumerate(sweep_history, start=1):
        for s, delta in snapshot.items():
            if delta > 0:
                last_positive[s] = t
    epochs = sorted({s for snap in sweep_history for s in snap})
    return {s: last_positive[s] - s if s in last_positive else 0 for s in epochs}


def lifespan_is_prefix(sweep_history: Sequence[Mapping[int, int]]) -> bool:
    """Check that each checkpoint's positive-credit epochs form an interval starting at its own epoch."""
    return verify_claim1(sweep_history)


def eot_marginal_coverage(coverage_history: Sequence[tuple[int, float, CoverageSet]]) -> dict[int, int]:
    """One accuracy-sorted sweep over all epochs at the end of training, keyed by epoch."""
    gains = observe_sweep(coverage_history)
    return dict(sorted(gains.deltas.items()))


def storage_footprint(active_history: Sequence[int]) -> int:
    return max(active_history, default=0)


def trajectory_report(
    coverage_history: Sequence[tuple[int, float, CoverageSet]],
    sweep_history: Sequence[Mapping[int, int]] | None = None,
    active_history: Sequence[int] | None = None,
) -> TrajectoryReport:
    if not coverage_history:
        raise ValueError("empty coverage history")
    final = coverage_history[-1][2]
    m = len(final)
    epochs, inter, resid, gaps, correct, kept, lost = [], [], [], [], [], [], []
    for epoch, _, cov in coverage_history:
        n_correct = cov.count()
        n_kept = int(np.count_nonzero(cov.bits & final.bits))
        ia, sr = n_correct / m, n_kept / m
        epochs.append(epoch)
        correct.append(n_correct)
        kept.append(n_kept)
        lost.append(n_correct - n_kept)
        inter.append(ia)
        resid.append(sr)
        # difference of the two reported terms so the gap identity holds exactly
        gaps.append(ia - sr)
    return TrajectoryReport(
        epochs,
        inter,
        resid,
        gaps,
        correct,
        kept,
        lost,
        float(np.mean(gaps)),
        checkpoint_lifespans(sweep_history) if sweep_history else {},
        eot_marginal_coverage(coverage_history),
        storage_footprint(active_history or []),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(report: TrajectoryReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "intermediate_acc", "structural_residual", "deviation_gap"])
        for row in zip(report.epochs, report.intermediate_accuracy, report.structural_residual, report.deviation_gap):
            w.writerow([row[0], *map(_fmt, row[1:])])


def write_lifespans_csv(sweep_history: Sequence[Mapping[int, int]], path: str | Path) -> None:
    """One row per checkpoint: lifespan, then its credit at every epoch (blank before it existed)."""
    spans = checkpoint_lifespans(sweep_history)
    n = len(sweep_history)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["checkpoint", "lifespan", *(f"delta_t{t}" for t in range(1, n + 1))])
        for s, span in spans.items():
            series = [snap.get(s, "") for snap in sweep_history]
            w.writerow([s, span, *series])


def write_eot_csv(
    coverage_history: Sequence[tuple[int, float, CoverageSet]], eot: Mapping[int, int], path: str | Path
) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "val_acc", "eot_delta"])
        for epoch, acc, _ in coverage_history:
            w.writerow([epoch, _fmt(acc), eot[epoch]])
