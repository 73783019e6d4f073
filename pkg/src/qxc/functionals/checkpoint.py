"""Versioned JSON checkpoints holding a model spec and its flat parameters.

Floats are written with ``repr`` precision by the json module, so a
save/load round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .models import XcModelSpec, build_model

CHECKPOINT_FORMAT = "qxc-checkpoint"
CHECKPOINT_VERSION = 1


def theta_digest(theta: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()


def save_checkpoint(
    path: str | Path,
    spec: XcModelSpec,
    theta: np.ndarray,
    *,
    seed: int,
    provenance: str = "",
    extra: dict | None = None,
) -> None:
    theta = np.asarray(theta, dtype=float)
    model = build_model(spec)
    if theta.shape != (model.n_params,):
        raise CheckpointError(f"parameter vector of shape {theta.shape} does not fit {model.n_params} parameters")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.model_dump(mode="json"),
        "seed": int(seed),
        "provenance_hash": hashlib.sha256(provenance.encode()).hexdigest(),
        "provenance": provenance,
        "n_params": model.n_params,
        "layout": model.layout(),
        "theta": [float(v) for v in theta],
        "theta_sha256": theta_digest(theta),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[XcModelSpec, np.ndarray, dict]:
    """Returns (spec, theta, metadata). Raises CheckpointError on any mismatch."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} not supported")
    try:
        spec = XcModelSpec.model_validate(doc["spec"])
        theta = np.array(doc["theta"], dtype=float)
    except Exception as exc:  # pydantic and key errors alike
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if theta_digest(theta) != doc.get("theta_sha256"):
        raise CheckpointError("parameter checksum mismatch")
    if theta.size != build_model(spec).n_params:
        raise CheckpointError("parameter count does not match the model spec")
    meta = {k: doc[k] for k in ("seed", "provenance", "provenance_hash", "layout", "extra") if k in doc}
    return spec, theta, meta
