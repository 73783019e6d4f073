"""Run configuration schemas, built-in presets and override handling.

A run config is one YAML mapping with ``schema_version: 1``. Values may be
overridden from the command line with ``--set dotted.key=value`` where the
value is parsed as YAML. Paths starting with ``builtin:`` refer to data files
shipped with the package.
"""

from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path
from typing import Literal, get_args

import yaml
from pydantic import BaseModel, ConfigDict, field_validator

from ..errors import ConfigError
from ..functionals.models import CircuitConfig, XcModelSpec, preset
from ..scf import ScfConfig
from ..train import TrainConfig

SCHEMA_VERSION = 1


def resolve_path(path: str) -> Path:
    if path.startswith("builtin:"):
        return Path(str(resources.files("qxc") / "data" / path.split(":", 1)[1]))
    return Path(path)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    x_min: float = -20.48
    x_max: float = 20.48
    n_points: int = 513


class KernelConfig(_Strict):
    softening: float = 1.0
    strength: float = 1.0


class SystemsConfig(_Strict):
    label: str = "H2"
    separations: list[float]


class ModelChoice(_Strict):
    """Either a named preset or a full spec; ``checkpoint`` loads parameters."""

    preset: str | None = None
    spec: XcModelSpec | None = None
    checkpoint: str | None = None
    overrides: dict = {}

    def resolve(self, n_grid: int) -> XcModelSpec:
        if self.spec is not None:
            return self.spec
        if self.preset is None:
            raise ConfigError("model needs a preset, a spec or a checkpoint")
        base = preset(self.preset, n_grid).model_dump()
        base.update(self.overrides)
        return XcModelSpec.model_validate(base)


class RunBase(_Strict):
    schema_version: int = SCHEMA_VERSION
    command: str
    run_dir: str = "runs/default"
    seed: int = 0

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {v} not supported (expected {SCHEMA_VERSION})")
        return v


class DatasetGenRun(RunBase):
    command: Literal["dataset-gen"] = "dataset-gen"
    grid: GridConfig = GridConfig()
    kernel: KernelConfig = KernelConfig()
    systems: list[SystemsConfig]
    output: str = "dataset.dat"
    provenance: str = "exact diagonalization"


class TrainRun(RunBase):
    command: Literal["train"] = "train"
    dataset: str
    model: ModelChoice
    scf: ScfConfig = ScfConfig()
    train: TrainConfig = TrainConfig()
    eval_scf: ScfConfig = ScfConfig(n_iterations=200, mode="inference", density_tol=1e-8)
    eval_indices: list[int] | None = None
    baseline: ModelChoice | None = None


class EvalRun(RunBase):
    command: Literal["eval"] = "eval"
    dataset: str
    model: ModelChoice
    indices: list[int] | None = None
    eval_scf: ScfConfig = ScfConfig(n_iterations=200, mode="inference", density_tol=1e-8)


class NoiseSweepRun(RunBase):
    command: Literal["noise-sweep"] = "noise-sweep"
    dataset: str
    model: ModelChoice
    scf: ScfConfig = ScfConfig()
    train: TrainConfig = TrainConfig()
    eval_scf: ScfConfig = ScfConfig(n_iterations=200, mode="inference", density_tol=1e-8)
    sigmas: list[float] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
    seeds: list[int] = [0, 1, 2, 3]
    fit_sigmas: list[float] = [0.1, 1.0, 10.0]
    tail_epochs: int = 10
    workers: int = 1


class ShotSweepRun(RunBase):
    command: Literal["shot-sweep"] = "shot-sweep"
    dataset: str
    model: ModelChoice
    scf: ScfConfig = ScfConfig()
    train: TrainConfig = TrainConfig()
    eval_scf: ScfConfig = ScfConfig(n_iterations=100, mode="inference", density_tol=1e-6)
    gate_noise: list[float] = [0.0, 1e-3, 1e-2]
    shots: list[int] = [100, 1000, 10000]
    scaling_shots: list[int] = [100, 1000, 10000, 100000]
    scaling_repeats: int = 400
    workers: int = 1


class RealStabilityConfig(_Strict):
    label: str = "H2"
    separation: float = 1.6
    grid: GridConfig = GridConfig()
    kernel: KernelConfig = KernelConfig()
    model: ModelChoice | None = None
    scf: ScfConfig = ScfConfig(n_iterations=2000, mode="inference", density_tol=1e-11)
    width: float = 4.0


class StabilityRun(RunBase):
    command: Literal["stability"] = "stability"
    kappas: list[float] = [0.3, 0.5, 0.9]
    alpha: float = 1.0
    epsilons: list[float] = [1e-3, 1e-2, 1e-1]
    dimension: int = 32
    real: RealStabilityConfig | None = RealStabilityConfig()


class LipschitzRun(RunBase):
    command: Literal["lipschitz"] = "lipschitz"
    circuits: list[dict] = [
        {"n_qubits": n, "depth": d, "reuploads": r, "feature_map": fm}
        for fm in ("product", "chebyshev")
        for n, d, r in ((1, 1, 1), (2, 2, 1), (3, 2, 2), (4, 3, 1), (2, 1, 3), (6, 2, 2))
    ]
    n_theta: int = 20
    n_samples: int = 721


class ResourcesRun(RunBase):
    command: Literal["resources"] = "resources"
    n_param: int = 100
    n_grid: int = 1000
    n_ks: int = 10
    n_shots: int = 10_000
    n_epochs: int = 1000


class ScfDebugRun(RunBase):
    command: Literal["scf-debug"] = "scf-debug"
    label: str = "H2"
    separation: float = 1.6
    occupation: Literal["integer", "fermi"] = "integer"
    temperature: float = 1e-2
    grid: GridConfig = GridConfig()
    kernel: KernelConfig = KernelConfig()
    model: ModelChoice | None = None
    scf: ScfConfig = ScfConfig(n_iterations=100, mode="inference", density_tol=1e-8)


SCHEMAS: dict[str, type[RunBase]] = {
    "dataset-gen": DatasetGenRun,
    "train": TrainRun,
    "eval": EvalRun,
    "noise-sweep": NoiseSweepRun,
    "shot-sweep": ShotSweepRun,
    "stability": StabilityRun,
    "lipschitz": LipschitzRun,
    "resources": ResourcesRun,
    "scf-debug": ScfDebugRun,
}

_COARSE_GRID = {"x_min": -10.0, "x_max": 10.0, "n_points": 129}

PRESETS: dict[str, dict[str, dict]] = {
    "dataset-gen": {
        "h2_profile": {
            "run_dir": "runs/dataset_h2",
            "systems": [{"label": "H2", "separations": [0.8, 1.2, 1.6, 2.0, 2.4, 3.0, 3.6, 4.4, 1.4, 2.8]}],
            "output": "h2_profile.dat",
        },
        "h2_coarse": {
            "run_dir": "runs/dataset_h2_coarse",
            "grid": _COARSE_GRID,
            "systems": [{"label": "H2", "separations": [1.0, 1.6, 2.4, 3.2]}],
            "output": "h2_coarse.dat",
        },
    },
    "train": {
        "h2_gqnn": {
            "run_dir": "runs/h2_gqnn",
            "dataset": "builtin:h2_profile.dat",
            "model": {"preset": "gqnn"},
            "scf": {"reflection_symmetry": True},
            "train": {"epochs": 300, "polish_epochs": 400, "train_indices": [0, 1, 2, 3, 4, 5, 6, 7], "val_indices": [8, 9]},
            "eval_scf": {"n_iterations": 300, "mode": "inference", "density_tol": 1e-8, "reflection_symmetry": True},
            "eval_indices": [0, 1, 2, 3, 4, 5, 6, 7],
            "baseline": {"preset": "lda_poly", "checkpoint": "builtin:lda_h2.json"},
        },
        "h2_lda_fit": {
            "run_dir": "runs/h2_lda_fit",
            "dataset": "builtin:h2_profile.dat",
            "model": {"preset": "lda_poly"},
            "train": {"epochs": 50, "optimizer": "lbfgs", "train_indices": [2]},
            "eval_indices": [2],
        },
    },
    "eval": {
        "h2_lda": {
            "run_dir": "runs/h2_lda_eval",
            "dataset": "builtin:h2_profile.dat",
            "model": {"preset": "lda_poly", "checkpoint": "builtin:lda_h2.json"},
            "indices": [0, 1, 2, 3, 4, 5, 6, 7],
        },
    },
    "noise-sweep": {
        "noise_lmlp": {
            "run_dir": "runs/noise_lmlp",
            "dataset": "builtin:h2_coarse.dat",
            "model": {"preset": "lmlp"},
            "train": {"epochs": 60, "lr_start": 5e-3},
        },
    },
    "shot-sweep": {
        "shot_lqnn": {
            "run_dir": "runs/shot_lqnn",
            "dataset": "builtin:h2_coarse.dat",
            "model": {"spec": {"architecture": "lqnn_pr", "n_grid": 129, "circuit": {"n_qubits": 2, "depth": 2}}},
            "train": {"epochs": 20, "train_indices": [1]},
            "scf": {"n_iterations": 10},
            "gate_noise": [0.0, 1e-2],
            "shots": [100, 10000],
        },
    },
    "stability": {"default": {"run_dir": "runs/stability"}},
    "lipschitz": {"default": {"run_dir": "runs/lipschitz"}},
    "resources": {"paper": {"run_dir": "runs/resources_paper"}},
    "scf-debug": {"h2": {"run_dir": "runs/scf_debug_h2"}},
}


def _submodel(annotation):
    """The pydantic model inside an annotation such as ``Foo | None``."""
    for candidate in (annotation, *get_args(annotation)):
        if isinstance(candidate, type) and issubclass(candidate, BaseModel):
            return candidate
    return None


def _set_dotted(schema: type[BaseModel] | None, doc: dict, dotted: str, value) -> None:
    """Set ``a.b.c = value``; missing parents start from the schema default
    so that one override does not discard the other default fields."""
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        info = schema.model_fields.get(key) if schema is not None else None
        if not isinstance(node.get(key), dict):
            default = info.get_default(call_default_factory=True) if info is not None and not info.is_required() else None
            node[key] = default.model_dump(mode="json") if isinstance(default, BaseModel) else {}
        schema = _submodel(info.annotation) if info is not None else None
        node = node[key]
    node[keys[-1]] = value


def load_raw(command: str, source: str | None) -> dict:
    """Config mapping from a file path, a preset name, or defaults."""
    if source is None:
        return {}
    path = Path(source)
    if path.is_file():
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{source} does not contain a mapping")
        return doc
    presets = PRESETS.get(command, {})
    if source in presets:
        return copy.deepcopy(presets[source])
    raise ConfigError(f"no config file or {command} preset named {source!r}; presets: {sorted(presets)}")


def build_config(command: str, source: str | None, overrides: list[str] = ()) -> RunBase:
    doc = load_raw(command, source)
    doc.setdefault("command", command)
    if doc["command"] != command:
        raise ConfigError(f"config is for {doc['command']!r}, not {command!r}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_dotted(SCHEMAS[command], doc, key.strip(), yaml.safe_load(raw))
    return SCHEMAS[command].model_validate(doc)


def snapshot(config: RunBase) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)


__all__ = [
    "CircuitConfig",
    "PRESETS",
    "SCHEMAS",
    "build_config",
    "resolve_path",
    "snapshot",
]
