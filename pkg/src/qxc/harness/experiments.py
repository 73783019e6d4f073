"""Verification experiments: noise and shot sweeps, SCF stability, spectral
Lipschitz bounds and measurement-budget estimates."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import ortho_group

from .. import qsim
from ..errors import ConfigError, QxcError, ScfDivergenceError
from ..functionals.models import XcEvaluation, XcModel, XcModelSpec, build_model
from ..oracle import ReferenceRecord
from ..scf import ScfConfig, run_scf
from ..system import Grid1D, InteractionKernel, SystemSpec
from ..train import TrainConfig, evaluate_profile, fit


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log10(x), np.log10(y), 1)[0])


# ----------------------------------------------------------------------------
# measurement budget


@dataclass(frozen=True)
class ResourceEstimate:
    n_param: int
    n_grid: int
    n_ks: int
    n_shots: int
    n_epochs: int

    def __post_init__(self) -> None:
        if min(self.n_param, self.n_grid, self.n_ks, self.n_shots, self.n_epochs) < 1:
            raise ConfigError("resource counts must be positive")

    @property
    def global_total(self) -> int:
        return (2 * self.n_param + 2 * self.n_grid * self.n_ks + self.n_ks) * self.n_shots * self.n_epochs

    @property
    def local_total(self) -> int:
        return (2 * self.n_param + 2 * self.n_grid * self.n_ks + self.n_grid * self.n_ks) * self.n_shots * self.n_epochs

    @property
    def parallel_global(self) -> int:
        return self.n_ks * self.n_shots * self.n_epochs

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(global_total=self.global_total, local_total=self.local_total, parallel_global=self.parallel_global)
        return out


BENCHMARK_SCALE = dict(n_param=100, n_grid=1000, n_ks=10, n_shots=10_000, n_epochs=1000)


def render_resources(est: ResourceEstimate) -> str:
    rows = [
        ("N_param", est.n_param),
        ("N_grid", est.n_grid),
        ("N_KS", est.n_ks),
        ("N_shots", est.n_shots),
        ("N_epochs", est.n_epochs),
        ("global, sequential", est.global_total),
        ("local, sequential", est.local_total),
        ("global, parallel over grid and parameters", est.parallel_global),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value:.4g}" if value >= 1e6 else f"{name:<{width}}  {value}" for name, value in rows)


def resource_estimate(n_param: int, n_grid: int, n_ks: int, n_shots: int, n_epochs: int) -> ResourceEstimate:
    return ResourceEstimate(int(n_param), int(n_grid), int(n_ks), int(n_shots), int(n_epochs))


# ----------------------------------------------------------------------------
# shot noise


def shot_scaling(shots: list[int], repeats: int = 400, seed: int = 0, n_qubits: int = 3) -> tuple[list[dict], float]:
    """Empirical spread of the sampled magnetization against the shot count."""
    rng = np.random.default_rng(seed)
    spec = qsim.CircuitSpec(n_qubits, 2)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    state = qsim.run_statevector(spec, theta, [0.3])
    exact = float(qsim.expectation_magnetization(state))
    probs = np.tile(qsim.probabilities(state), (repeats, 1))
    rows = []
    for n in shots:
        means, _ = qsim.sample_magnetization(probs, int(n), rng)
        rows.append({"shots": int(n), "std": float(np.std(means, ddof=1)), "bias": float(np.mean(means) - exact)})
    return rows, loglog_slope([r["shots"] for r in rows], [r["std"] for r in rows])


# ----------------------------------------------------------------------------
# SCF stability under bounded XC errors


@dataclass
class StabilityReport:
    synthetic: list[dict]
    synthetic_slopes: dict[float, float]
    real: list[dict] = field(default_factory=list)
    density_slope: float = math.nan
    energy_fit_slope: float = math.nan
    energy_secant: float = math.nan
    kappa_est: float = math.nan
    energy_lipschitz: float = math.nan

    @property
    def bound_holds(self) -> bool:
        return all(r["e_inf"] <= r["bound"] * (1 + 1e-9) for r in self.synthetic)

    def summary(self) -> dict:
        return {
            "bound_holds": self.bound_holds,
            "synthetic_slopes": {str(k): v for k, v in self.synthetic_slopes.items()},
            "density_slope": self.density_slope,
            "energy_fit_slope": self.energy_fit_slope,
            "energy_secant": self.energy_secant,
            "kappa_est": self.kappa_est,
            "energy_lipschitz": self.energy_lipschitz,
        }


def synthetic_stability(
    kappa: float,
    alpha: float,
    epsilons: list[float],
    dim: int = 32,
    seed: int = 0,
    max_iter: int = 10_000,
    tol: float = 1e-14,
) -> list[dict]:
    """Perturbed affine contraction ``T(n) = n* + kappa Q (n - n*) + alpha eps u(n)``.

    ``Q`` is orthogonal and ``u(n)`` a unit vector that varies with ``n``, so
    every step carries a disturbance of norm exactly ``alpha * eps``.
    """
    if not 0.0 < kappa < 1.0:
        raise ConfigError("contraction factor must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    q = ortho_group.rvs(dim, random_state=rng)
    target = rng.standard_normal(dim)
    base = rng.standard_normal(dim)
    mix = rng.standard_normal((dim, dim)) / dim

    def direction(n):
        d = base + np.tanh(mix @ (n - target))
        return d / np.linalg.norm(d)

    rows = []
    for eps in epsilons:
        n = target + rng.standard_normal(dim)
        for it in range(1, max_iter + 1):
            nxt = target + kappa * (q @ (n - target)) + alpha * eps * direction(n)
            step = np.linalg.norm(nxt - n)
            n = nxt
            if step <= tol * max(1.0, np.linalg.norm(n)):
                break
        else:
            raise ScfDivergenceError(f"synthetic map did not converge in {max_iter} steps")
        e_inf = float(np.linalg.norm(n - target))
        rows.append({"kappa": kappa, "epsilon": eps, "e_inf": e_inf, "bound": alpha * eps / (1 - kappa), "iterations": it})
    return rows


class _BiasedModel:
    """Adds ``eps * integral(p n)`` to a model's XC energy (``eps * p`` to v_XC)."""

    def __init__(self, model: XcModel | None, eps: float, profile: np.ndarray):
        self.model, self.eps, self.profile = model, eps, profile

    def evaluate(self, theta, density, grid, **_):
        if self.model is None:
            energy, potential = 0.0, np.zeros_like(density)
        else:
            ev = self.model.evaluate(theta, density, grid)
            energy, potential = ev.energy, ev.potential
        energy += self.eps * float(np.dot(grid.weights * self.profile, density))
        return XcEvaluation(energy, potential + self.eps * self.profile)


def scf_stability(
    system: SystemSpec,
    grid: Grid1D,
    kernel: InteractionKernel,
    model: XcModel | None,
    theta,
    epsilons: list[float],
    scf: ScfConfig,
    width: float = 4.0,
) -> tuple[list[dict], float]:
    """Converged SCF with an injected XC error of sup-norm ``eps``.

    The error is a bounded Gaussian bump ``p(x) = exp(-x^2 / (2 width^2))``
    added to v_XC. Returns per-eps rows and the contraction factor estimated
    from successive residual ratios of the unperturbed run.
    """
    profile = np.exp(-0.5 * (grid.points / width) ** 2)
    base = run_scf(system, _BiasedModel(model, 0.0, profile), theta, scf, grid, kernel)
    if not base.converged:
        raise ScfDivergenceError("baseline SCF did not converge")
    res = np.array([s.residual for s in base.steps])
    ratios = res[1:] / res[:-1]
    tail = ratios[res[1:] > 1e3 * scf.density_tol]
    kappa_est = float(np.median(tail if tail.size else ratios))
    rows = []
    for eps in epsilons:
        traj = run_scf(system, _BiasedModel(model, eps, profile), theta, scf, grid, kernel)
        if not traj.converged:
            raise ScfDivergenceError(f"perturbed SCF did not converge at eps={eps}")
        dn = traj.final_density - base.final_density
        rows.append(
            {
                "epsilon": eps,
                "e_inf": float(math.sqrt(np.dot(grid.weights, dn * dn))),
                "e_energy": abs(traj.final_energy - base.final_energy),
                "kappa_est": kappa_est,
            }
        )
    return rows, kappa_est


def stability_verify(
    kappas: list[float],
    alpha: float,
    epsilons: list[float],
    dim: int = 32,
    seed: int = 0,
    real: dict | None = None,
) -> StabilityReport:
    synthetic, slopes = [], {}
    for kappa in kappas:
        rows = synthetic_stability(kappa, alpha, epsilons, dim, seed)
        synthetic += rows
        slopes[kappa] = loglog_slope([r["epsilon"] for r in rows], [r["e_inf"] for r in rows])
    report = StabilityReport(synthetic, slopes)
    if real is not None:
        rows, kappa_est = scf_stability(**real, epsilons=epsilons)
        eps = np.array([r["epsilon"] for r in rows])
        de = np.array([r["e_energy"] for r in rows])
        report.real = rows
        report.kappa_est = kappa_est
        report.density_slope = loglog_slope(eps, [r["e_inf"] for r in rows])
        report.energy_fit_slope = float(np.dot(eps, de) / np.dot(eps, eps))
        small = int(np.argmin(eps))
        report.energy_secant = float(de[small] / eps[small])
        report.energy_lipschitz = float(np.max(de / np.maximum(np.array([r["e_inf"] for r in rows]), 1e-300)))
    return report


# ----------------------------------------------------------------------------
# spectral Lipschitz bound


def lipschitz_suite(specs: list[qsim.CircuitSpec], n_theta: int = 20, n_samples: int = 721, seed: int = 0) -> list[dict]:
    """Compare sampled ``sup |f'|`` against the spectral bound for each spec.

    Product maps are sampled over angles in [-pi, pi]; Chebyshev maps over
    t = arccos(x) in (0, pi), differentiating with respect to t.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for spec in specs:
        bound = qsim.lipschitz_bound(spec)
        if spec.feature_map == "product":
            x = np.linspace(-np.pi, np.pi, n_samples)
            chain = np.ones_like(x)
        else:
            t = np.linspace(0.0, np.pi, n_samples + 2)[1:-1]
            x = np.cos(t)
            chain = -np.sin(t)
        worst = 0.0
        for _ in range(n_theta):
            theta = rng.uniform(-np.pi, np.pi, spec.n_params)
            grad = qsim.input_gradient(spec, theta, x[:, None])[:, 0] * chain
            worst = max(worst, float(np.max(np.abs(grad))))
        rows.append(
            {
                "feature_map": spec.feature_map,
                "n_qubits": spec.n_qubits,
                "depth": spec.depth,
                "reuploads": spec.reuploads,
                "bound": bound,
                "max_sampled": worst,
                "ratio": worst / bound,
            }
        )
    return rows


# ----------------------------------------------------------------------------
# training sweeps


def _profile_row(model, theta, records, grid, kernel, eval_scf) -> dict:
    prof = evaluate_profile(model, theta, records, grid, kernel, eval_scf)
    m = prof.metrics
    return {"avg_abs_dE": m.avg_abs_de, "mse_n": m.avg_mse_density, "npe": m.npe, "n_failed": m.n_failed}


def run_cells(job, cells: list, workers: int = 1) -> list:
    """Evaluate ``job`` on every cell, in a process pool when ``workers > 1``.

    Results come back in cell order regardless of completion order.
    """
    if workers <= 1 or len(cells) <= 1:
        return [job(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, cells))


def _failed(row: dict, exc: QxcError, loss_key: str) -> dict:
    row.update({loss_key: math.nan, "avg_abs_dE": math.nan, "mse_n": math.nan, "npe": math.nan, "status": f"{exc.code}: {exc}"})
    return row


def _noise_cell(args) -> dict:
    records, grid, kernel, spec, scf, train, tail, eval_scf, sigma, seed = args
    cfg = train.model_copy(update={"seed": seed, "val_indices": []})
    model = build_model(spec)
    row = {"sigma": sigma, "seed": seed}
    try:
        result = fit(model, records, grid, kernel, scf, cfg, noise_std=sigma)
        if result.status != "ok":
            raise ScfDivergenceError(result.status)
        losses = [r["train_loss"] for r in result.log][-tail:]
        row["converged_loss"] = float(np.mean(losses))
        row.update(_profile_row(model, result.theta_final, records, grid, kernel, eval_scf))
        row["status"] = "ok"
    except QxcError as exc:
        _failed(row, exc, "converged_loss")
    return row


def noise_sweep(
    records: list[ReferenceRecord],
    grid: Grid1D,
    kernel: InteractionKernel,
    spec: XcModelSpec,
    scf: ScfConfig,
    train: TrainConfig,
    sigmas: list[float],
    seeds: list[int],
    tail: int,
    eval_scf: ScfConfig,
    workers: int = 1,
) -> list[dict]:
    """Train once per (sigma, seed) with Gaussian noise on the XC energy.

    The converged loss is the mean noisy training loss over the last ``tail``
    logged epochs; metrics use the final parameters without noise.
    """
    cells = [(records, grid, kernel, spec, scf, train, tail, eval_scf, s, seed) for s in sigmas for seed in seeds]
    rows = run_cells(_noise_cell, cells, workers)
    return sorted(rows, key=lambda r: (r["sigma"], r["seed"]))


def mean_losses(rows: list[dict]) -> dict[float, float]:
    """Mean converged loss per sigma over the finite cells."""
    out = {}
    for sigma in sorted({r["sigma"] for r in rows}):
        vals = [r["converged_loss"] for r in rows if r["sigma"] == sigma and np.isfinite(r["converged_loss"])]
        out[sigma] = float(np.mean(vals)) if vals else math.nan
    return out


def noise_slope(rows: list[dict], fit_sigmas: list[float]) -> float:
    means = mean_losses(rows)
    ys = [means.get(s, math.nan) for s in fit_sigmas]
    if len(set(fit_sigmas)) < 2 or not np.all(np.isfinite(ys)):
        return math.nan
    return loglog_slope(fit_sigmas, ys)


def _shot_cell(args) -> dict:
    records, grid, kernel, spec, scf, train, eval_scf, seed, p, shots = args
    circuit = spec.circuit.model_copy(update={"dephasing": p, "damping": p, "shots": shots, "backend": "auto"})
    cell_spec = spec.model_copy(update={"circuit": circuit})
    rng = np.random.default_rng([seed, int(1e6 * p), shots or 0])
    model = build_model(cell_spec, rng)
    row = {"p": p, "shots": shots if shots is not None else "inf"}
    try:
        result = fit(model, records, grid, kernel, scf, train.model_copy(update={"seed": seed}))
        if result.status != "ok":
            raise ScfDivergenceError(result.status)
        row["final_loss"] = result.log[-1]["train_loss"]
        row.update(_profile_row(model, result.theta_final, records, grid, kernel, eval_scf))
        row["status"] = "ok"
    except QxcError as exc:
        _failed(row, exc, "final_loss")
    return row


def shot_gate_sweep(
    records: list[ReferenceRecord],
    grid: Grid1D,
    kernel: InteractionKernel,
    spec: XcModelSpec,
    scf: ScfConfig,
    train: TrainConfig,
    cells: list[tuple[float, int | None]],
    eval_scf: ScfConfig,
    seed: int = 0,
    workers: int = 1,
) -> list[dict]:
    """One training run per (gate-noise probability, shot count) cell.

    Gate noise is applied as dephasing and amplitude damping of equal
    probability after every gate; ``None`` shots means exact expectations.
    """
    if spec.circuit is None:
        raise ConfigError("shot and gate sweeps need a circuit model")
    jobs = [(records, grid, kernel, spec, scf, train, eval_scf, seed, p, shots) for p, shots in cells]
    return run_cells(_shot_cell, jobs, workers)
