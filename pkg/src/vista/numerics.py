"""Dense float64 numerics for a small MLP trained with soft targets.

Everything the trainer needs lives here: a rectifier MLP with a linear
output layer, a stable softmax, soft-target cross-entropy with its exact
gradient, SGD with momentum and weight decay, and per-epoch learning-rate
schedules. Arrays are plain ``numpy.ndarray`` of dtype float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12

ACTIVATIONS = ("relu",)
SCHEDULE_KINDS = ("constant", "cosine", "cosine-warm-restarts")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, shifted by the row max."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax received non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_cross_entropy(pred: np.ndarray, target: np.ndarray) -> np.ndarray | float:
    """Cross-entropy ``-sum_k target_k * ln(pred_k)`` along the last axis.

    ``pred`` is clamped from below at ``PROB_FLOOR`` before the log. A 1-D
    input returns a float, a 2-D input returns one value per row.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"dimension mismatch: pred {p.shape} vs target {t.shape}")
    out = -(t * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=-1)
    if out.ndim == 0:
        return float(out)
    return out


def entropy(dist: np.ndarray) -> np.ndarray | float:
    """Shannon entropy in nats, with ``0 ln 0 = 0``."""
    d = np.asarray(dist, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0)), 0.0)
    out = -terms.sum(axis=-1)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class MlpModel:
    """Fully connected network: rectifier hidden layers, linear output.

    ``weights[i]`` has shape ``(layer_sizes[i], layer_sizes[i + 1])`` so a
    batch ``X`` (rows = samples) maps through ``X @ W + b``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if self.layer_sizes[-1] < 2:
            raise ValueError("output layer must have at least 2 classes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight/bias arrays does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ValueError(f"layer {i}: expected weight {expected}, got {w.shape} / bias {b.shape}")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: all weights, then all biases."""
        return [*self.weights, *self.biases]

    def copy(self) -> MlpModel:
        return MlpModel(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def init_mlp(layer_sizes: list[int], rng: np.random.Generator) -> MlpModel:
    """He-normal weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_sizes), weights, biases)


def mlp_forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return logits and the per-layer inputs needed by :func:`mlp_backward`."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"batch shape {x.shape} incompatible with input size {model.layer_sizes[0]}")
    cache = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        cache.append(x)
        z = x @ w + b
        x = z if i == last else np.maximum(z, 0.0)
    return x, cache


def predict_proba(model: MlpModel, features: np.ndarray) -> np.ndarray:
    logits, _ = mlp_forward(model, features)
    return softmax(logits)


def mlp_backward(
    model: MlpModel, cache: list[np.ndarray], logits: np.ndarray, target: np.ndarray
) -> list[np.ndarray]:
    """Gradient of the batch-mean soft cross-entropy w.r.t. every parameter.

    Returned in the same order as :meth:`MlpModel.params`.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    n = logits.shape[0]
    delta = (softmax(logits) - target) / n
    nl = len(model.weights)
    grad_w: list[np.ndarray] = [None] * nl  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * nl  # type: ignore[list-item]
    for i in range(nl - 1, -1, -1):
        a_in = cache[i]
        grad_w[i] = a_in.T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            # cache[i] is the rectified output of layer i-1; its mask is a_in > 0
            delta = (delta @ model.weights[i].T) * (a_in > 0)
    return [*grad_w, *grad_b]


def batch_loss(model: MlpModel, batch: np.ndarray, target: np.ndarray) -> float:
    logits, _ = mlp_forward(model, batch)
    return float(np.mean(soft_cross_entropy(softmax(logits), target)))


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState) -> list[np.ndarray]:
    """In-place SGD step: ``v = mu*v + (g + wd*p)``, ``p -= lr*v``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("velocity buffers do not mirror params")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g + state.weight_decay * p
        p -= state.learning_rate * v
    return params


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "cosine"
    base_lr: float = 0.01
    period: int = 40
    min_lr: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown lr schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0 <= self.min_lr <= self.base_lr:
            raise ValueError("min_lr must lie in [0, base_lr]")


def _cosine(base: float, low: float, frac: float) -> float:
    return low + (base - low) * (1.0 + math.cos(math.pi * frac)) / 2.0


def lr_at(schedule: LrSchedule, epoch: float, total_epochs: int) -> float:
    """Learning rate at 1-based ``epoch``.

    ``epoch`` may be fractional (``epoch + batch/num_batches``) when the rate
    is updated per batch.
    """
    if schedule.kind == "constant":
        return schedule.base_lr
    pos = epoch - 1.0
    if schedule.kind == "cosine":
        if total_epochs <= 1:
            return schedule.base_lr
        return _cosine(schedule.base_lr, schedule.min_lr, min(pos / (total_epochs - 1), 1.0))
    if schedule.period == 1:
        return schedule.base_lr
    within = pos - schedule.period * math.floor(pos / schedule.period)
    return _cosine(schedule.base_lr, schedule.min_lr, min(within / (schedule.period - 1), 1.0))
