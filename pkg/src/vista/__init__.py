"""Validation-informed, coverage-weighted online self-distillation at desk scale."""

from vista.coverage import (
    CheckpointPool,
    CheckpointRecord,
    CoverageGains,
    CoverageSet,
    TeacherDistribution,
    build_teacher,
    compute_coverage,
    marginal_coverage_sweep,
    normalize_gains,
    order_checkpoints,
    prune_contributing_set,
    verify_claim1,
)
from vista.data import Dataset, NoiseSpec, SplitSpec, make_gaussian_clusters, split
from vista.distill import BetaSchedule, BlendedTarget, beta_at, blend_target
from vista.trainer import EpochLog, ExperimentResult, TrainConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BetaSchedule",
    "BlendedTarget",
    "CheckpointPool",
    "CheckpointRecord",
    "CoverageGains",
    "CoverageSet",
    "Dataset",
    "EpochLog",
    "ExperimentResult",
    "NoiseSpec",
    "SplitSpec",
    "TeacherDistribution",
    "TrainConfig",
    "beta_at",
    "blend_target",
    "build_teacher",
    "compute_coverage",
    "make_gaussian_clusters",
    "marginal_coverage_sweep",
    "normalize_gains",
    "order_checkpoints",
    "prune_contributing_set",
    "run_experiment",
    "split",
    "verify_claim1",
]
