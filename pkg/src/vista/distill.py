"""Hard-label / teacher blending and the beta schedule family."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vista.coverage import TeacherDistribution

BETA_KINDS = ("exponential", "linear", "cosine", "fixed")


@dataclass(frozen=True)
class BetaSchedule:
    kind: str = "exponential"
    k: float = 2.0
    fixed_value: float = 0.0
    total_epochs: int = 100

    def __post_init__(self) -> None:
        if self.kind not in BETA_KINDS:
            raise ValueError(f"unknown beta schedule {self.kind!r}; expected one of {BETA_KINDS}")
        if self.kind == "exponential" and self.k <= 0:
            raise ValueError("exponential rate k must be positive")
        if self.kind == "fixed" and not 0.0 <= self.fixed_value <= 1.0:
            raise ValueError("fixed beta must lie in [0, 1]")
        if self.kind != "fixed" and self.total_epochs < 2:
            raise ValueError("non-fixed beta schedules need at least 2 epochs")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")

    @property
    def name(self) -> str:
        if self.kind == "fixed":
            return f"fix-{self.fixed_value:g}"
        if self.kind == "exponential":
            return f"exp:{self.k:g}"
        return self.kind


def parse_beta(spec: str, total_epochs: int) -> BetaSchedule:
    """Parse ``fix-<c>``, ``linear``, ``cosine``, ``exp`` or ``exp:<k>``."""
    s = spec.strip().lower()
    if s.startswith("fix-"):
        try:
            value = float(s[4:])
        except ValueError:
            raise ValueError(f"bad fixed beta {spec!r}") from None
        return BetaSchedule("fixed", fixed_value=value, total_epochs=total_epochs)
    if s in ("linear", "cosine"):
        return BetaSchedule(s, total_epochs=total_epochs)
    if s in ("exp", "exponential"):
        return BetaSchedule("exponential", total_epochs=total_epochs)
    if s.startswith("exp:"):
        try:
            k = float(s[4:])
        except ValueError:
            raise ValueError(f"bad exponential rate in {spec!r}") from None
        return BetaSchedule("exponential", k=k, total_epochs=total_epochs)
    raise ValueError(f"unknown beta schedule {spec!r}")


def beta_at(schedule: BetaSchedule, t: int) -> float:
    """Teacher weight at epoch ``t`` (1-based)."""
    E = schedule.total_epochs
    if not 1 <= t <= E:
        raise ValueError(f"epoch {t} outside [1, {E}]")
    if schedule.kind == "fixed":
        return schedule.fixed_value
    u = (t - 1) / (E - 1)
    if schedule.kind == "linear":
        return u
    if schedule.kind == "cosine":
        return (1.0 - math.cos(math.pi * u)) / 2.0
    return (1.0 - math.exp(-schedule.k * u)) / (1.0 - math.exp(-schedule.k))


@dataclass
class BlendedTarget:
    rows: np.ndarray
    beta_used: float
    degenerate: bool = False


def blend_target(
    one_hot_labels: np.ndarray, teacher: TeacherDistribution | np.ndarray | None, beta: float
) -> BlendedTarget:
    """``(1 - beta) * one_hot + beta * teacher`` row by row.

    A missing teacher (degenerate coverage) falls back to the hard labels.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    hard = np.asarray(one_hot_labels, dtype=np.float64)
    if teacher is None:
        return BlendedTarget(hard.copy(), 0.0, True)
    q = teacher.rows if isinstance(teacher, TeacherDistribution) else np.asarray(teacher, dtype=np.float64)
    if q.shape != hard.shape:
        raise ValueError(f"teacher shape {q.shape} does not match labels {hard.shape}")
    return BlendedTarget((1.0 - beta) * hard + beta * q, beta, False)
