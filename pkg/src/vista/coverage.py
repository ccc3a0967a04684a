"""Validation coverage sets, marginal-coverage sweeps and the coverage-weighted teacher.

A checkpoint's coverage set holds the validation indices it classifies
correctly. Checkpoints are swept from most to least accurate; each one is
credited only with the validation points no earlier checkpoint in the sweep
already covers. Those credits, normalized, weight the checkpoints' stored
train-set predictions into a teacher distribution.

In the light variant, checkpoints whose credit is at or below a tolerance are
dropped for good. A checkpoint with zero credit can never regain credit later
(the union it is measured against only grows), so with tolerance 0 the light
variant reproduces the basic one exactly.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POOL_MODES = ("basic", "light")
TAU_DENOMINATORS = ("validation", "gains")


class CoverageSet:
    """Fixed-length bitset over validation indices, backed by a bool array."""

    __slots__ = ("bits",)

    def __init__(self, bits: Iterable[bool] | np.ndarray) -> None:
        self.bits = np.array(bits, dtype=bool).reshape(-1)

    @classmethod
    def from_indices(cls, indices: Iterable[int], length: int) -> CoverageSet:
        bits = np.zeros(length, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CoverageSet) and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"CoverageSet({self.count()}/{len(self)})"

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def indices(self) -> set[int]:
        return set(np.flatnonzero(self.bits).tolist())

    def claim_into(self, union: np.ndarray) -> int:
        """Return ``|self \\ union|`` and OR ``self`` into ``union`` in place."""
        gain = int(np.count_nonzero(self.bits & ~union))
        union |= self.bits
        return gain

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> CoverageSet:
        raw = np.frombuffer(data, dtype=np.uint8)
        return cls(np.unpackbits(raw, count=length, bitorder="little").astype(bool))


def argmax_lowest(predictions: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(predictions, axis=1)


def compute_coverage(val_predictions: np.ndarray, val_labels: np.ndarray) -> CoverageSet:
    preds = np.asarray(val_predictions)
    labels = np.asarray(val_labels)
    if preds.ndim != 2 or preds.shape[0] != labels.shape[0]:
        raise ValueError(f"predictions {preds.shape} do not match {labels.shape[0]} labels")
    return CoverageSet(argmax_lowest(preds) == labels)


@dataclass
class CheckpointRecord:
    """End-of-epoch snapshot. Prediction matrices are post-softmax."""

    epoch: int
    val_accuracy: float
    coverage: CoverageSet
    train_predictions: np.ndarray | None = None
    val_predictions: np.ndarray | None = None
    params: list[np.ndarray] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.val_accuracy <= 1.0:
            raise ValueError("val_accuracy must lie in [0, 1]")
        if len(self.coverage) and abs(self.val_accuracy - self.coverage.count() / len(self.coverage)) > 1e-12:
            raise ValueError(f"epoch {self.epoch}: val_accuracy disagrees with coverage popcount")


@dataclass
class CoverageGains:
    """Marginal coverage credits for one sweep.

    ``order`` is the sweep order. ``deltas`` maps epoch to its integer credit;
    ``weights`` maps epoch to its normalized credit and stays empty until
    :func:`normalize_gains` runs (or when the sweep is degenerate).
    """

    order: list[int]
    deltas: dict[int, int]
    union_size: int
    weights: dict[int, float] = field(default_factory=dict)
    degenerate: bool = False

    def total(self) -> int:
        return sum(self.deltas.values())


def _sort_key(record: CheckpointRecord) -> tuple[float, int]:
    return (-record.val_accuracy, -record.epoch)


def order_checkpoints(records: CheckpointPool | Iterable[CheckpointRecord]) -> list[int]:
    """Epochs by descending validation accuracy; ties go to the later epoch."""
    recs = list(records.records.values()) if isinstance(records, CheckpointPool) else list(records)
    if not recs:
        raise ValueError("cannot order an empty checkpoint collection")
    return [r.epoch for r in sorted(recs, key=_sort_key)]


def marginal_coverage_sweep(ordered: Sequence[tuple[int, CoverageSet]]) -> CoverageGains:
    """Single pass crediting each set with the bits not yet in the running union."""
    if not ordered:
        return CoverageGains([], {}, 0)
    m = len(ordered[0][1])
    union = np.zeros(m, dtype=bool)
    deltas: dict[int, int] = {}
    for epoch, cset in ordered:
        if len(cset) != m:
            raise ValueError("coverage sets differ in length")
        deltas[epoch] = cset.claim_into(union)
    return CoverageGains([e for e, _ in ordered], deltas, int(np.count_nonzero(union)))


def sweep_records(records: Mapping[int, CheckpointRecord] | Iterable[CheckpointRecord], order: list[int] | None = None) -> CoverageGains:
    recs = dict(records) if isinstance(records, Mapping) else {r.epoch: r for r in records}
    if order is None:
        order = order_checkpoints(recs.values())
    return marginal_coverage_sweep([(e, recs[e].coverage) for e in order])


def observe_sweep(history: Sequence[tuple[int, float, CoverageSet]]) -> CoverageGains:
    """Accuracy-ordered sweep over ``(epoch, accuracy, coverage)`` history entries."""
    ordered = sorted(history, key=lambda h: (-h[1], -h[0]))
    return marginal_coverage_sweep([(e, c) for e, _, c in ordered])


def normalize_gains(gains: CoverageGains, active: Iterable[int] | None = None) -> CoverageGains:
    """Fill normalized weights over ``active`` (default: every swept epoch).

    A zero total marks the gains degenerate and leaves the weights empty.
    """
    epochs = list(gains.order) if active is None else [e for e in gains.order if e in set(active)]
    total = sum(gains.deltas[e] for e in epochs)
    if total == 0:
        return CoverageGains(gains.order, dict(gains.deltas), gains.union_size, {}, True)
    weights = {e: gains.deltas[e] / total for e in epochs}
    return CoverageGains(gains.order, dict(gains.deltas), gains.union_size, weights, False)


@dataclass
class TeacherDistribution:
    rows: np.ndarray
    source_gains: CoverageGains


def weighted_sum(matrices: Mapping[int, np.ndarray], weights: Mapping[int, float]) -> np.ndarray:
    """Ascending-epoch weighted sum; zero weights are skipped.

    The fixed order makes the result independent of sweep order and of which
    zero-weight checkpoints are still stored.
    """
    out = None
    for epoch in sorted(weights):
        w = weights[epoch]
        if w == 0.0:
            continue
        term = w * matrices[epoch]
        out = term if out is None else out + term
    if out is None:
        raise ValueError("weighted sum over an empty support")
    return out


def build_teacher(pool: CheckpointPool, gains: CoverageGains, n_train: int) -> TeacherDistribution:
    if gains.degenerate or not gains.weights:
        raise ValueError("cannot build a teacher from degenerate or unnormalized gains")
    mats = {}
    for epoch, w in gains.weights.items():
        if w == 0.0:
            continue
        rec = pool.records.get(epoch)
        if rec is None or rec.train_predictions is None:
            raise ValueError(f"checkpoint {epoch} is active but its train predictions are not stored")
        if rec.train_predictions.shape[0] != n_train:
            raise ValueError(f"checkpoint {epoch} has {rec.train_predictions.shape[0]} rows, expected {n_train}")
        mats[epoch] = rec.train_predictions
    return TeacherDistribution(weighted_sum(mats, gains.weights), gains)


@dataclass
class CheckpointPool:
    """Stored checkpoints for one run (``S_t`` in basic mode, the contributing set in light mode)."""

    mode: str = "basic"
    tolerance: float = 0.0
    tau_denominator: str = "validation"
    records: dict[int, CheckpointRecord] = field(default_factory=dict)
    pruned: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.mode not in POOL_MODES:
            raise ValueError(f"unknown pool mode {self.mode!r}")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.tau_denominator not in TAU_DENOMINATORS:
            raise ValueError(f"unknown tau denominator {self.tau_denominator!r}")

    def __len__(self) -> int:
        return len(self.records)

    def epochs(self) -> list[int]:
        return sorted(self.records)

    def add(self, record: CheckpointRecord) -> None:
        if record.epoch in self.pruned:
            raise ValueError(f"checkpoint {record.epoch} was pruned and cannot re-enter the pool")
        if record.epoch in self.records:
            raise ValueError(f"checkpoint {record.epoch} already stored")
        self.records[record.epoch] = record


def prune_contributing_set(pool: CheckpointPool, gains: CoverageGains, tau: float | None = None) -> CheckpointPool:
    """Keep checkpoints whose credit fraction exceeds ``tau``; drop the rest for good.

    The fraction is ``delta / |V|`` by default, or ``delta / sum(delta)`` when
    the pool's ``tau_denominator`` is ``"gains"``.
    """
    if pool.mode != "light":
        raise ValueError("pruning only applies to a light-mode pool")
    tau = pool.tolerance if tau is None else tau
    if pool.tau_denominator == "validation":
        any_rec = next(iter(pool.records.values()), None)
        denom = len(any_rec.coverage) if any_rec is not None else 1
    else:
        denom = max(sum(gains.deltas.get(e, 0) for e in pool.records), 1)
    for epoch in list(pool.records):
        if not gains.deltas.get(epoch, 0) / denom > tau:
            del pool.records[epoch]
            pool.pruned.add(epoch)
    return pool


def claim1_violations(history: Sequence[Mapping[int, int]]) -> list[tuple[int, int]]:
    """``(checkpoint, epoch)`` pairs where a checkpoint regained credit after hitting zero."""
    zeroed: set[int] = set()
    bad = []
    for t, snapshot in enumerate(history, start=1):
        for epoch, delta in snapshot.items():
            if delta > 0 and epoch in zeroed:
                bad.append((epoch, t))
            elif delta == 0:
                zeroed.add(epoch)
    return bad


def verify_claim1(history: Sequence[Mapping[int, int]]) -> bool:
    """True iff no checkpoint's credit returns to positive once it reached zero."""
    return not claim1_violations(history)


_PRED_HEADER = struct.Struct("<qqq")


def write_predictions(path: str | Path, epoch: int, predictions: np.ndarray) -> None:
    """Flat binary: int64 header (epoch, rows, cols) then row-major float64 data."""
    mat = np.ascontiguousarray(predictions, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(_PRED_HEADER.pack(epoch, *mat.shape))
        fh.write(mat.tobytes())


def read_predictions(path: str | Path) -> tuple[int, np.ndarray]:
    raw = Path(path).read_bytes()
    epoch, rows, cols = _PRED_HEADER.unpack_from(raw)
    body = raw[_PRED_HEADER.size :]
    if len(body) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows}x{cols} float64 payload, got {len(body)} bytes")
    return epoch, np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()
