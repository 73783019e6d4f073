"""Exchange-correlation models: classical, circuit-based and hybrid."""

from .checkpoint import load_checkpoint, save_checkpoint
from .circuits import AmplitudeBlock, CircuitBlock, GradSink
from .mlp import MLPBlock, PowerLawBlock
from .models import (
    PRESETS,
    CircuitConfig,
    XcEvaluation,
    XcModel,
    XcModelSpec,
    build_model,
    eval_exc,
    eval_vxc,
    param_gradient,
    preset,
)

__all__ = [
    "PRESETS",
    "AmplitudeBlock",
    "CircuitBlock",
    "CircuitConfig",
    "GradSink",
    "MLPBlock",
    "PowerLawBlock",
    "XcEvaluation",
    "XcModel",
    "XcModelSpec",
    "build_model",
    "eval_exc",
    "eval_vxc",
    "load_checkpoint",
    "param_gradient",
    "preset",
    "save_checkpoint",
]
