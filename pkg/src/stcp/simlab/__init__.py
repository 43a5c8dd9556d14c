"""Synthetic experiments: generators, the repeat runner and metrics."""

from .generators import FAMILIES, SyntheticSetting, gen_bundle, sigma
from .kmeans import assign, inertia, kmeans
from .metrics import (
    metric_improvement_oracle,
    metric_improvement_rel,
    metric_miscoverage,
    metric_std,
    reference_std,
)
from .runner import (
    METHODS,
    SCORE_TYPES,
    ExperimentConfig,
    ExperimentReport,
    MethodSummary,
    RepeatContext,
    RepeatRecord,
    aggregate,
    run_experiment,
    prepare_repeat,
    run_repeat,
)

__all__ = [
    "FAMILIES", "SyntheticSetting", "gen_bundle", "sigma",
    "assign", "inertia", "kmeans",
    "metric_improvement_oracle", "metric_improvement_rel", "metric_miscoverage",
    "metric_std", "reference_std",
    "METHODS", "SCORE_TYPES", "ExperimentConfig", "ExperimentReport", "MethodSummary",
    "RepeatContext", "RepeatRecord", "aggregate", "prepare_repeat", "run_experiment", "run_repeat",
]
