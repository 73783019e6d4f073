"""Regularized training through the unrolled SCF, and profile metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import minimize

from .errors import ConfigError, QxcError
from .functionals.circuits import GradSink
from .functionals.models import XcModel
from .oracle import ReferenceRecord
from .scf import AdjointStats, ScfConfig, ScfTrajectory, run_scf, scf_backward
from .system import Grid1D, InteractionKernel

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class LossWeights:
    """Per-iteration energy weights ``decay**(N - k) * H(k - offset)``, H(0) = 1."""

    decay: float = 0.9
    offset: int = 10

    def eta(self, n_iterations: int) -> np.ndarray:
        k = np.arange(1, n_iterations + 1)
        return np.where(k >= self.offset, self.decay ** (n_iterations - k), 0.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 200
    optimizer: Literal["adam", "lbfgs"] = "adam"
    # L-BFGS iterations run after Adam, starting from the best Adam parameters
    polish_epochs: int = 0
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    hold_fraction: float = 0.6
    seed: int = 0
    loss_offset: int = 10
    loss_decay: float = 0.9
    train_indices: list[int] | None = None
    val_indices: list[int] = []

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.epochs < 0 or self.polish_epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.polish_epochs and self.optimizer != "adam":
            raise ConfigError("polish_epochs follows an adam phase; use optimizer adam")
        if not 0 < self.lr_end <= self.lr_start:
            raise ConfigError("learning rate must decrease: need 0 < lr_end <= lr_start")
        if not 0.0 <= self.hold_fraction <= 1.0:
            raise ConfigError("hold_fraction must lie in [0, 1]")
        return self

    def weights(self) -> LossWeights:
        return LossWeights(self.loss_decay, self.loss_offset)


def learning_rate(epoch: int, epochs: int, start: float = 1e-2, end: float = 1e-4, hold: float = 0.6) -> float:
    """Constant for the first ``hold`` fraction of epochs, then geometric decay to ``end``."""
    if epochs <= 1:
        return start
    knee = hold * (epochs - 1)
    if epoch <= knee:
        return start
    frac = (epoch - knee) / (epochs - 1 - knee)
    return float(start * (end / start) ** min(1.0, frac))


# ----------------------------------------------------------------------------
# loss


def molecule_loss(trajectory: ScfTrajectory, ref: ReferenceRecord, weights: LossWeights) -> tuple[float, float]:
    """(density term, energy term) for one molecule before averaging."""
    grid = trajectory.grid
    n_e = trajectory.system.n_electrons
    dn = trajectory.final_density - ref.density
    density_term = float(np.dot(grid.weights, dn * dn) / n_e)
    eta = weights.eta(len(trajectory.steps))
    de = trajectory.energies - ref.energy
    energy_term = float(np.dot(eta, de * de) / n_e)
    return density_term, energy_term


def loss(trajectories: list[ScfTrajectory], refs: list[ReferenceRecord], grid: Grid1D, weights: LossWeights = LossWeights()) -> float:
    if len(trajectories) != len(refs) or not refs:
        raise ConfigError("need one trajectory per reference record")
    total = 0.0
    for traj, ref in zip(trajectories, refs):
        if traj.grid != grid or ref.density.shape != (grid.n_points,):
            raise ConfigError("trajectory, reference and grid disagree")
        a, b = molecule_loss(traj, ref, weights)
        total += a + b
    return total / len(refs)


def _loss_cotangents(traj: ScfTrajectory, ref: ReferenceRecord, weights: LossWeights, scale: float):
    n_e = traj.system.n_electrons
    eta = weights.eta(len(traj.steps))
    e_bars = 2.0 * eta * (traj.energies - ref.energy) * scale / n_e
    n_bar = 2.0 * traj.grid.weights * (traj.final_density - ref.density) * scale / n_e
    return e_bars, n_bar


@dataclass
class Objective:
    """Loss and exact gradient over a set of reference records."""

    model: XcModel
    records: list[ReferenceRecord]
    grid: Grid1D
    kernel: InteractionKernel
    scf: ScfConfig
    weights: LossWeights = field(default_factory=LossWeights)
    noise_std: float = 0.0
    rng: np.random.Generator | None = None
    stats: AdjointStats = field(default_factory=AdjointStats)

    def trajectories(self, theta) -> list[ScfTrajectory]:
        return [
            run_scf(r.spec, self.model, theta, self.scf, self.grid, self.kernel, noise_std=self.noise_std, rng=self.rng)
            for r in self.records
        ]

    def value(self, theta) -> float:
        return loss(self.trajectories(theta), self.records, self.grid, self.weights)

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        trajs = self.trajectories(theta)
        value = loss(trajs, self.records, self.grid, self.weights)
        sink = GradSink(self.model.n_params)
        scale = 1.0 / len(self.records)
        for traj, ref in zip(trajs, self.records):
            e_bars, n_bar = _loss_cotangents(traj, ref, self.weights, scale)
            scf_backward(traj, self.model, theta, e_bars, n_bar, sink, self.stats)
        return value, sink.resolve(theta)


# ----------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; ``state`` is updated in place."""
    if theta.shape != grad.shape:
        raise ConfigError("parameter and gradient shapes differ")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "lr", "grad_norm", "wall_time_s")


@dataclass
class FitResult:
    theta: np.ndarray  # best-validation parameters
    theta_init: np.ndarray
    theta_final: np.ndarray
    best_epoch: int
    best_val_loss: float
    log: list[dict]
    status: str = "ok"  # or "diverged"
    degenerate_pairs: int = 0

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for row in self.log:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def fit(
    model: XcModel,
    records: list[ReferenceRecord],
    grid: Grid1D,
    kernel: InteractionKernel,
    scf: ScfConfig,
    config: TrainConfig,
    *,
    theta0: np.ndarray | None = None,
    noise_std: float = 0.0,
    progress: Callable[[dict], None] | None = None,
) -> FitResult:
    """Train on ``train_indices`` and keep the parameters with the lowest
    validation loss (training loss when no validation split is given).

    Row ``k`` of the log describes the parameters after ``k`` updates. With
    ``polish_epochs`` set, L-BFGS continues from the best Adam parameters and
    its iterations extend the log.
    """
    if scf.mode != "training":
        raise ConfigError("training needs the fixed-unroll SCF mode")
    if scf.n_iterations < config.loss_offset:
        raise ConfigError(f"n_iterations {scf.n_iterations} is below the loss offset {config.loss_offset}")
    train_idx = config.train_indices if config.train_indices is not None else [
        i for i in range(len(records)) if i not in set(config.val_indices)
    ]
    if not train_idx:
        raise ConfigError("empty training split")
    for i in (*train_idx, *config.val_indices):
        if not 0 <= i < len(records):
            raise ConfigError(f"record index {i} out of range")
    weights = config.weights()
    rng = np.random.default_rng(config.seed)
    train = Objective(model, [records[i] for i in train_idx], grid, kernel, scf, weights, noise_std, rng)
    val = Objective(model, [records[i] for i in config.val_indices], grid, kernel, scf, weights) if config.val_indices else None

    theta = model.init(config.seed) if theta0 is None else np.array(theta0, dtype=float)
    theta_init = theta.copy()
    best = (math.inf, theta.copy(), 0)
    rows: list[dict] = []
    status = "ok"
    t0 = time.perf_counter()

    def record(epoch, train_loss, grad_norm, lr, theta_now) -> bool:
        nonlocal best
        val_loss = val.value(theta_now) if val is not None else math.nan
        score = val_loss if val is not None else train_loss
        row = {
            "epoch": epoch,
            "train_loss": float(train_loss),
            "val_loss": float(val_loss),
            "lr": float(lr),
            "grad_norm": float(grad_norm),
            "wall_time_s": time.perf_counter() - t0,
        }
        rows.append(row)
        if progress:
            progress(row)
        if not np.isfinite(train_loss) or train_loss > DIVERGENCE_LIMIT:
            return False
        if score < best[0]:
            best = (score, theta_now.copy(), epoch)
        return True

    def lbfgs(theta_start, first_epoch, maxiter):
        nonlocal status
        epoch_box = [first_epoch]

        def callback(xk):
            epoch_box[0] += 1
            th = np.asarray(xk)
            if not record(epoch_box[0], train.value(th), math.nan, 0.0, th):
                raise StopIteration

        try:
            return minimize(train.value_and_grad, theta_start, jac=True, method="L-BFGS-B", callback=callback, options={"maxiter": maxiter}).x
        except (StopIteration, QxcError) as exc:
            log.error("L-BFGS stopped after epoch %d: %s", epoch_box[0], exc or "divergence")
            status = "diverged"
            return theta_start

    if config.optimizer == "adam":
        state = AdamState.zeros(theta.size)
        for epoch in range(config.epochs + 1):
            try:
                if epoch < config.epochs:
                    value, grad = train.value_and_grad(theta)
                    gnorm = float(np.linalg.norm(grad))
                else:
                    value, grad, gnorm = train.value(theta), None, math.nan
            except QxcError as exc:
                log.error("training stopped at epoch %d: %s", epoch, exc)
                status = f"diverged: {exc}"
                break
            lr = learning_rate(epoch, config.epochs, config.lr_start, config.lr_end, config.hold_fraction) if grad is not None else 0.0
            if not record(epoch, value, gnorm, lr, theta):
                status = "diverged"
                break
            if grad is not None:
                theta = adam_step(theta, grad, state, lr)

    if config.optimizer == "lbfgs":
        value, grad = train.value_and_grad(theta)
        record(0, value, float(np.linalg.norm(grad)), 0.0, theta)
        if config.epochs > 0:
            theta = lbfgs(theta, 0, config.epochs)
    elif config.polish_epochs > 0 and status == "ok":
        theta = lbfgs(best[1].copy(), rows[-1]["epoch"], config.polish_epochs)

    return FitResult(best[1], theta_init, theta, best[2], best[0], rows, status, train.stats.degenerate_pairs)


# ----------------------------------------------------------------------------
# evaluation along a dissociation profile


@dataclass
class Metrics:
    avg_abs_de: float
    std_abs_de: float
    npe: float
    avg_mse_density: float
    std_mse_density: float
    n_points: int
    n_failed: int

    def as_dict(self) -> dict:
        return self.__dict__.copy()


def npe(errors) -> float:
    errors = np.asarray(errors, dtype=float)
    return float(errors.max() - errors.min()) if errors.size else math.nan


def summarize(de: np.ndarray, mse: np.ndarray, n_failed: int = 0) -> Metrics:
    if de.size == 0:
        return Metrics(math.nan, math.nan, math.nan, math.nan, math.nan, 0, n_failed)
    return Metrics(
        float(np.mean(np.abs(de))),
        float(np.std(np.abs(de))),
        npe(de),
        float(np.mean(mse)),
        float(np.std(mse)),
        int(de.size),
        n_failed,
    )


PROFILE_COLUMNS = ["label", "R", "E_model", "E_ref", "dE", "mse_n", "converged", "iterations"]


@dataclass
class Profile:
    rows: list[dict]
    metrics: Metrics

    def write(self, csv_path: str | Path, json_path: str | Path | None = None) -> None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=PROFILE_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)
        if json_path is not None:
            Path(json_path).write_text(json.dumps({"metrics": self.metrics.as_dict(), "points": self.rows}, indent=1) + "\n", encoding="utf-8")


def evaluate_profile(
    model: XcModel | None,
    theta,
    records: list[ReferenceRecord],
    grid: Grid1D,
    kernel: InteractionKernel,
    scf: ScfConfig,
) -> Profile:
    """Inference-mode SCF per geometry; failed or unconverged points are flagged
    and left out of the aggregates."""
    rows = []
    for ref in records:
        row = {"label": ref.spec.label, "R": ref.spec.separation, "E_ref": ref.energy}
        try:
            traj = run_scf(ref.spec, model, theta, scf, grid, kernel)
        except QxcError as exc:
            log.warning("SCF failed for %s R=%s: %s", ref.spec.label, ref.spec.separation, exc)
            row.update(E_model=math.nan, dE=math.nan, mse_n=math.nan, converged=False, iterations=0)
            rows.append(row)
            continue
        dn = traj.final_density - ref.density
        row.update(
            E_model=traj.final_energy,
            dE=traj.final_energy - ref.energy,
            mse_n=float(np.dot(grid.weights, dn * dn) / ref.spec.n_electrons),
            converged=traj.converged,
            iterations=traj.iterations_used,
        )
        rows.append(row)
    good = [r for r in rows if r["converged"]]
    metrics = summarize(np.array([r["dE"] for r in good]), np.array([r["mse_n"] for r in good]), len(rows) - len(good))
    return Profile(rows, metrics)
