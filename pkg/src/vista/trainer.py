"""Epoch orchestration for vanilla training, basic/light VISTA and the ablation variants."""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from vista.coverage import (
    CheckpointPool,
    CheckpointRecord,
    CoverageGains,
    CoverageSet,
    build_teacher,
    compute_coverage,
    marginal_coverage_sweep,
    normalize_gains,
    observe_sweep,
    order_checkpoints,
    prune_contributing_set,
    weighted_sum,
)
from vista.data import Dataset
from vista.distill import BetaSchedule, BlendedTarget, beta_at, blend_target, parse_beta
from vista.numerics import (
    LrSchedule,
    MlpModel,
    OptimizerState,
    init_mlp,
    lr_at,
    mlp_backward,
    mlp_forward,
    sgd_step,
    soft_cross_entropy,
    softmax,
)

log = logging.getLogger(__name__)

METHODS = ("vanilla", "vista", "vista-light")
WEIGHTINGS = ("coverage", "accuracy-only", "chronological-coverage", "smoothed-coverage")


class InvariantError(AssertionError):
    """A coverage or target invariant failed during a run."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    method: str = "vista"
    weighting: str = "coverage"
    smoothing_window: int = 3
    tau: float = 0.0
    tau_denominator: str = "validation"
    beta: str = "exp:2"
    epochs: int = 100
    hidden: tuple[int, ...] = (32,)
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: str = "cosine"
    lr_period: int = 40
    min_lr: float = 0.0
    per_batch_lr: bool = False
    seed: int = 0
    enable_ema_variant: bool = False
    ema_blend: float = 0.01
    diagnostics: bool = True
    strict: bool = True

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be odd and >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.method == "vista-light" and self.weighting not in ("coverage", "chronological-coverage"):
            raise ValueError("vista-light prunes on marginal coverage; use coverage or chronological-coverage weighting")
        if self.enable_ema_variant and self.method != "vista":
            raise ValueError("the EMA variant runs on top of method=vista")
        if not 0.0 <= self.ema_blend <= 1.0:
            raise ValueError("ema_blend must lie in [0, 1]")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be >= 1")
        self.beta_schedule()
        self.lr_schedule_obj()

    def beta_schedule(self) -> BetaSchedule:
        return parse_beta(self.beta, max(self.epochs, 2))

    def lr_schedule_obj(self) -> LrSchedule:
        return LrSchedule(self.lr_schedule, self.lr, self.lr_period, self.min_lr)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    beta: float
    deltas: dict[int, int]
    weights: dict[int, float]
    active_set_size: int
    degenerate: bool

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_accuracy,
            "val_acc": self.val_accuracy,
            "test_acc": self.test_accuracy,
            "beta": self.beta,
            "active_set_size": self.active_set_size,
            "degenerate": int(self.degenerate),
        }


@dataclass
class ExperimentResult:
    config: TrainConfig
    logs: list[EpochLog]
    model: MlpModel
    val_size: int
    coverage_history: list[tuple[int, float, CoverageSet]] = field(default_factory=list)
    sweep_history: list[dict[int, int]] = field(default_factory=list)
    active_history: list[int] = field(default_factory=list)
    pool: CheckpointPool | None = None
    targets: list[np.ndarray] = field(default_factory=list)


def accuracy_only_weights(records: list[CheckpointRecord]) -> CoverageGains:
    """Teacher weights proportional to raw validation accuracy."""
    if not records:
        raise ValueError("no checkpoints to weight")
    epochs = sorted(r.epoch for r in records)
    acc = {r.epoch: r.val_accuracy for r in records}
    total = sum(acc[e] for e in epochs)
    if total == 0:
        return CoverageGains(epochs, {}, 0, {}, True)
    return CoverageGains(epochs, {}, 0, {e: acc[e] / total for e in epochs}, False)


def chronological_gains(records: list[CheckpointRecord]) -> CoverageGains:
    """Marginal coverage sweep with the newest checkpoint first."""
    if not records:
        raise ValueError("no checkpoints to sweep")
    ordered = sorted(records, key=lambda r: -r.epoch)
    return marginal_coverage_sweep([(r.epoch, r.coverage) for r in ordered])


def smooth_predictions(matrices: dict[int, np.ndarray], window: int) -> dict[int, np.ndarray]:
    """Unweighted mean over a centered chronological window, clipped at the ends."""
    epochs = sorted(matrices)
    half = window // 2
    out = {}
    for i, e in enumerate(epochs):
        span = epochs[max(0, i - half) : i + half + 1]
        acc = matrices[span[0]].copy()
        for j in span[1:]:
            acc = acc + matrices[j]
        out[e] = acc / len(span)
    return out


def smoothed_coverage_gains(
    records: list[CheckpointRecord], val_labels: np.ndarray, window: int = 3
) -> tuple[CoverageGains, list[CheckpointRecord]]:
    """Sweep over coverage sets recomputed from window-smoothed predictions.

    Returns the gains and smoothed stand-in records whose prediction matrices
    the teacher should average.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    if any(r.val_predictions is None or r.train_predictions is None for r in records):
        raise ValueError("smoothing needs stored train and validation predictions")
    val = smooth_predictions({r.epoch: r.val_predictions for r in records}, window)
    train = smooth_predictions({r.epoch: r.train_predictions for r in records}, window)
    smoothed = []
    for r in records:
        cov = compute_coverage(val[r.epoch], val_labels)
        smoothed.append(
            CheckpointRecord(r.epoch, cov.count() / len(cov), cov, train[r.epoch], val[r.epoch])
        )
    order = order_checkpoints(smoothed)
    by_epoch = {r.epoch: r for r in smoothed}
    return marginal_coverage_sweep([(e, by_epoch[e].coverage) for e in order]), smoothed


def vista_ema_step(pool: CheckpointPool, gains: CoverageGains, model: MlpModel, blend: float) -> MlpModel:
    """Pull parameters toward the coverage-weighted average of stored checkpoints."""
    if not 0.0 <= blend <= 1.0:
        raise ValueError("blend must lie in [0, 1]")
    if gains.degenerate or not gains.weights:
        return model
    stored = {}
    for epoch, w in gains.weights.items():
        if w == 0.0:
            continue
        rec = pool.records.get(epoch)
        if rec is None or rec.params is None:
            raise ValueError(f"checkpoint {epoch} is active but its parameters are not stored")
        stored[epoch] = rec.params
    new = model.copy()
    params = new.params()
    for i, p in enumerate(params):
        teacher = weighted_sum({e: ps[i] for e, ps in stored.items()}, gains.weights)
        p += blend * (teacher - p)
    return new


def oracle_early_stop(history: list[EpochLog]) -> tuple[int, float]:
    """Epoch of peak validation accuracy (earliest on ties) and its test accuracy."""
    if not history:
        raise ValueError("empty history")
    best = max(history, key=lambda h: (h.val_accuracy, -h.epoch))
    return best.epoch, best.test_accuracy


def _check_conservation(gains: CoverageGains, sets: list[CoverageSet]) -> None:
    union = np.logical_or.reduce([c.bits for c in sets]) if sets else np.zeros(0, bool)
    if gains.total() != int(np.count_nonzero(union)):
        raise InvariantError(f"coverage conservation failed: {gains.total()} != {np.count_nonzero(union)}")


def _check_target(target: BlendedTarget, teacher: np.ndarray | None, labels: np.ndarray) -> None:
    rows = target.rows
    if teacher is not None:
        if np.any(teacher < 0) or np.max(np.abs(teacher.sum(1) - 1.0)) > 1e-9:
            raise InvariantError("teacher rows are not valid distributions")
    if np.any(rows < 0) or np.max(np.abs(rows.sum(1) - 1.0)) > 1e-9:
        raise InvariantError("blended target rows are not valid distributions")
    true_mass = rows[np.arange(rows.shape[0]), labels]
    if np.any(true_mass < 1.0 - target.beta_used - 1e-12):
        raise InvariantError("blended target violates the hard-label anchor bound")


def _predict(model: MlpModel, features: np.ndarray, epoch: int) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        logits, _ = mlp_forward(model, features)
    if not np.all(np.isfinite(logits)):
        raise TrainingDiverged(f"non-finite predictions at epoch {epoch}")
    return softmax(logits)


def _deterministic_ctx():
    if os.environ.get("VISTA_DETERMINISTIC") == "1":
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


def run_experiment(
    config: TrainConfig, train: Dataset, val: Dataset, test: Dataset, keep_targets: bool = False
) -> ExperimentResult:
    with _deterministic_ctx():
        return _run(config, train, val, test, keep_targets)


def _run(config: TrainConfig, train: Dataset, val: Dataset, test: Dataset, keep_targets: bool) -> ExperimentResult:
    if len(val) == 0:
        raise ValueError("validation set is empty")
    k = train.num_classes
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = init_mlp([train.features.shape[1], *config.hidden, k], np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    opt = OptimizerState(config.lr, config.momentum, config.weight_decay)
    lr_sched = config.lr_schedule_obj()
    beta_sched = config.beta_schedule()

    distilling = config.method in ("vista", "vista-light") and not config.enable_ema_variant
    light = config.method == "vista-light"
    smoothing = config.weighting == "smoothed-coverage"
    pool = CheckpointPool("light" if light else "basic", config.tau, config.tau_denominator)

    hard = train.one_hot()
    target = hard
    n = len(train)
    E = config.epochs
    n_batches = -(-n // config.batch_size)
    result = ExperimentResult(config, [], model, len(val), pool=pool if config.method != "vanilla" else None)

    for t in range(1, E + 1):
        perm = shuffle_rng.permutation(n)
        total_loss = 0.0
        for b in range(n_batches):
            pos = t + b / n_batches if config.per_batch_lr else t
            opt.learning_rate = lr_at(lr_sched, pos, E)
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            # overflow is caught below as divergence rather than warned about
            with np.errstate(over="ignore", invalid="ignore"):
                logits, cache = mlp_forward(model, train.features[idx])
                if not np.all(np.isfinite(logits)):
                    raise TrainingDiverged(f"non-finite logits at epoch {t} (lr={opt.learning_rate:g})")
                total_loss += float(np.sum(soft_cross_entropy(softmax(logits), target[idx])))
                grads = mlp_backward(model, cache, logits, target[idx])
                sgd_step(model.params(), grads, opt)
        train_loss = total_loss / n
        if not np.isfinite(train_loss) or not all(np.all(np.isfinite(p)) for p in model.params()):
            raise TrainingDiverged(f"non-finite loss or parameters at epoch {t} (lr={opt.learning_rate:g})")

        p_train, p_val, p_test = (_predict(model, d.features, t) for d in (train, val, test))
        cov = compute_coverage(p_val, val.labels)
        val_acc = cov.count() / len(cov)
        train_acc = float(np.mean(np.argmax(p_train, 1) == train.labels))
        test_acc = float(np.mean(np.argmax(p_test, 1) == test.labels))

        if config.diagnostics:
            result.coverage_history.append((t, val_acc, cov))
            observe = observe_sweep(result.coverage_history)
            if config.strict:
                _check_conservation(observe, [c for _, _, c in result.coverage_history])
            result.sweep_history.append(dict(sorted(observe.deltas.items())))

        beta_used, degenerate = 0.0, False
        gains = CoverageGains([], {}, 0)
        if config.method != "vanilla":
            pool.add(
                CheckpointRecord(
                    t,
                    val_acc,
                    cov,
                    train_predictions=p_train if distilling else None,
                    val_predictions=p_val if smoothing else None,
                    params=[p.copy() for p in model.params()] if config.enable_ema_variant else None,
                )
            )
            records = list(pool.records.values())
            swept, teacher_records = records, pool
            if config.weighting == "coverage":
                gains = marginal_coverage_sweep([(e, pool.records[e].coverage) for e in order_checkpoints(pool)])
            elif config.weighting == "chronological-coverage":
                gains = chronological_gains(records)
            elif config.weighting == "accuracy-only":
                gains = accuracy_only_weights(records)
            else:
                gains, smoothed = smoothed_coverage_gains(records, val.labels, config.smoothing_window)
                swept = smoothed
                teacher_records = CheckpointPool(records={r.epoch: r for r in smoothed})
            if config.strict and gains.deltas:
                _check_conservation(gains, [r.coverage for r in swept])
            if light:
                prune_contributing_set(pool, gains)
            if not gains.weights:
                gains = normalize_gains(gains, active=pool.records.keys())
            degenerate = gains.degenerate

            if config.enable_ema_variant:
                model = vista_ema_step(pool, gains, model, config.ema_blend)
                result.model = model
            elif t < E:
                beta = beta_at(beta_sched, t)
                teacher = None if degenerate else build_teacher(teacher_records, gains, n)
                blended = blend_target(hard, teacher, beta)
                if config.strict:
                    _check_target(blended, None if teacher is None else teacher.rows, train.labels)
                target = blended.rows
                beta_used = blended.beta_used
                if keep_targets:
                    result.targets.append(target)

        active = len(pool) if config.method != "vanilla" else 0
        result.active_history.append(active)
        result.logs.append(
            EpochLog(t, train_loss, train_acc, val_acc, test_acc, beta_used,
                     dict(gains.deltas), dict(gains.weights), active, degenerate)
        )
        log.debug("epoch %d loss=%.4f val=%.4f test=%.4f active=%d", t, train_loss, val_acc, test_acc, active)

    result.model = model
    return result
