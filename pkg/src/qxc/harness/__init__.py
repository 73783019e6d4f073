"""CLI, run configuration and verification experiments."""

from .config import PRESETS, SCHEMAS, build_config, resolve_path
from .experiments import (
    BENCHMARK_SCALE,
    ResourceEstimate,
    StabilityReport,
    lipschitz_suite,
    loglog_slope,
    noise_slope,
    noise_sweep,
    resource_estimate,
    shot_gate_sweep,
    shot_scaling,
    stability_verify,
    synthetic_stability,
)
from .rundir import RunDirectory

__all__ = [
    "BENCHMARK_SCALE",
    "PRESETS",
    "ResourceEstimate",
    "RunDirectory",
    "SCHEMAS",
    "StabilityReport",
    "build_config",
    "lipschitz_suite",
    "loglog_slope",
    "noise_slope",
    "noise_sweep",
    "resolve_path",
    "resource_estimate",
    "shot_gate_sweep",
    "shot_scaling",
    "stability_verify",
    "synthetic_stability",
]
