"""Kohn-Sham self-consistent field on the 1D grid, with an exact reverse pass.

Forward: each step builds ``v_KS = v_ext + v_H[n_in] + v_XC[n_in]``, takes
the lowest eigenpairs of the tridiagonal Hamiltonian, occupies them, and mixes
the raw output density linearly with the input.

Backward: ``scf_backward`` runs reverse accumulation through the cached
steps. Only the diagonal of the Hamiltonian depends on the density, so the
eigenpair adjoint reduces to a potential cotangent. Couplings between
computed eigenvectors use explicit ``1/(lambda_j - lambda_i)`` factors; the
uncomputed part of the spectrum enters through a shifted tridiagonal solve.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.linalg import lapack
from scipy.special import entr, expit

from .errors import ConfigError, DegenerateGapError, ScfDivergenceError
from .functionals.circuits import GradSink
from .functionals.models import XcEvaluation, XcModel
from .system import (
    Grid1D,
    HartreeOperator,
    InteractionKernel,
    SystemSpec,
    external_potential,
    hamiltonian,
    kinetic_bands,
    lowest_eigenpairs,
    solve_eigen,
)

log = logging.getLogger(__name__)

DEGENERACY_THRESHOLD = 1e-10
GAP_THRESHOLD = 1e-8
OCCUPATION_CUTOFF = 1e-18
FERMI_TOL = 1e-12


class ScfConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_iterations: int = 15
    mixing: float = 0.5
    density_tol: float = 1e-6
    mode: Literal["training", "inference"] = "training"
    # project each raw density onto its mirror-symmetric part before mixing;
    # removes the unstable antisymmetric mode of stretched symmetric molecules
    reflection_symmetry: bool = False

    @field_validator("n_iterations")
    @classmethod
    def _iterations(cls, v: int) -> int:
        if v < 1:
            raise ConfigError("n_iterations must be at least 1")
        return v

    @field_validator("mixing")
    @classmethod
    def _mixing(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ConfigError("mixing must lie in (0, 1]")
        return v

    @field_validator("density_tol")
    @classmethod
    def _tol(cls, v: float) -> float:
        if v <= 0:
            raise ConfigError("density_tol must be positive")
        return v


# ----------------------------------------------------------------------------
# Hamiltonian and occupations


def build_hamiltonian(v_ks: np.ndarray, grid: Grid1D) -> np.ndarray:
    return hamiltonian(grid, v_ks)


def grid_eigen(matrix: np.ndarray, grid: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """Full spectrum with columns normalized to ``sum_k h phi_k^2 = 1``."""
    vals, vecs = solve_eigen(matrix)
    return vals, vecs / math.sqrt(grid.spacing)


def fermi_occupations(energies: np.ndarray, n_electrons: int, temperature: float) -> tuple[np.ndarray, float]:
    """Per-orbital fractions ``g`` (f = 2g) and the chemical potential."""
    if temperature <= 0:
        raise ConfigError("fermi occupations need a positive temperature")
    target = 0.5 * n_electrons
    if target > energies.size:
        raise ConfigError(f"{energies.size} orbitals cannot hold {n_electrons} electrons")
    lo = float(energies.min()) - 20.0 * temperature
    hi = float(energies.max()) + 20.0 * temperature

    def count(mu: float) -> float:
        return float(expit((mu - energies) / temperature).sum())

    if not count(lo) <= target <= count(hi):
        raise ScfDivergenceError("chemical potential bracket does not enclose the electron count")
    mu = 0.5 * (lo + hi)
    for _ in range(400):
        mu = 0.5 * (lo + hi)
        excess = count(mu) - target
        if abs(excess) <= FERMI_TOL:
            break
        if excess > 0:
            hi = mu
        else:
            lo = mu
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mu)):
            break
    # Newton polish so that mu is smooth in the energies to machine precision
    for _ in range(2):
        g = expit((mu - energies) / temperature)
        slope = float(np.sum(g * (1.0 - g))) / temperature
        if slope <= 0:
            break
        trial = mu - (g.sum() - target) / slope
        if abs(count(trial) - target) > abs(count(mu) - target):
            break
        mu = trial
    return expit((mu - energies) / temperature), mu


def fermi_entropy(g: np.ndarray, temperature: float) -> float:
    """``gamma * S = -2 gamma sum[g ln g + (1-g) ln(1-g)]``; non-negative."""
    return float(2.0 * temperature * np.sum(entr(g) + entr(1.0 - g)))


def fermi_jacobian(g: np.ndarray, temperature: float) -> np.ndarray:
    """d g_i / d eps_j with the chemical potential held by the electron count."""
    gp = g * (1.0 - g)
    total = gp.sum()
    jac = np.diag(gp)
    if total > 0:
        jac -= np.outer(gp, gp) / total
    return -jac / temperature


def _fermi_vjp(g: np.ndarray, temperature: float, gbar: np.ndarray) -> np.ndarray:
    gp = g * (1.0 - g)
    total = gp.sum()
    out = gbar * gp
    if total > 0:
        out -= gp * (np.dot(gbar, gp) / total)
    return -out / temperature


# ----------------------------------------------------------------------------
# state containers


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    external: float
    hartree: float
    xc: float
    entropy_term: float = 0.0

    @property
    def total(self) -> float:
        return self.kinetic + self.external + self.hartree + self.xc + self.entropy_term

    def as_dict(self) -> dict[str, float]:
        return {
            "T_s": self.kinetic,
            "V": self.external,
            "E_H": self.hartree,
            "E_XC": self.xc,
            "entropy_term": self.entropy_term,
            "total": self.total,
        }


@dataclass(frozen=True)
class KsState:
    orbitals: np.ndarray  # (N_grid, N_orb), grid-normalized
    orbital_energies: np.ndarray
    occupations: np.ndarray  # electrons per orbital, in [0, 2]
    density: np.ndarray
    chemical_potential: float | None = None


@dataclass
class _StepCache:
    n_in: np.ndarray
    xc: XcEvaluation | None
    v_ks: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray  # Euclidean-orthonormal
    next_energy: float
    g: np.ndarray  # occupation fraction per orbital, f = 2g
    mu: float | None
    n_raw: np.ndarray


@dataclass
class ScfStep:
    energy: EnergyBreakdown
    density: np.ndarray  # mixed output density
    residual: float
    cache: _StepCache = field(repr=False)


@dataclass
class ScfTrajectory:
    system: SystemSpec
    initial_density: np.ndarray
    steps: list[ScfStep]
    converged: bool
    config: ScfConfig
    grid: Grid1D
    kernel: InteractionKernel

    @property
    def iterations_used(self) -> int:
        return len(self.steps)

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy.total for s in self.steps])

    @property
    def final_density(self) -> np.ndarray:
        return self.steps[-1].density

    @property
    def final_energy(self) -> float:
        return self.steps[-1].energy.total

    def final_state(self) -> KsState:
        c = self.steps[-1].cache
        return KsState(
            c.vectors / math.sqrt(self.grid.spacing), c.energies, 2.0 * c.g, self.steps[-1].density, c.mu
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "T_s", "V", "E_H", "E_XC", "entropy_term", "total", "density_residual"])
            for k, step in enumerate(self.steps, start=1):
                e = step.energy.as_dict()
                writer.writerow([k, *(repr(e[key]) for key in ("T_s", "V", "E_H", "E_XC", "entropy_term", "total")), repr(step.residual)])


# ----------------------------------------------------------------------------
# forward


class KohnSham:
    """Fixed pieces of one system on one grid: bands, external and Hartree."""

    def __init__(self, system: SystemSpec, grid: Grid1D, kernel: InteractionKernel | None = None):
        self.system = system
        self.grid = grid
        self.kernel = kernel or InteractionKernel()
        self.kin_diag, self.kin_off = kinetic_bands(grid)
        self.v_ext = external_potential(system, grid, self.kernel)
        self.hartree = HartreeOperator(grid, self.kernel)

    def solve(self, v_ks: np.ndarray):
        """Lowest eigenpairs, occupations and raw density for a potential."""
        sysm = self.system
        h = self.grid.spacing
        diag = self.kin_diag + v_ks
        if sysm.occupation == "integer":
            count = sysm.n_pairs + 1
            vals, vecs = lowest_eigenpairs(diag, self.kin_off, count + 1)
            nxt = float(vals[count]) if vals.size > count else math.inf
            vals, vecs = vals[:count], vecs[:, :count]
            gap = vals[sysm.n_pairs] - vals[sysm.n_pairs - 1] if vals.size > sysm.n_pairs else math.inf
            if gap < GAP_THRESHOLD:
                raise DegenerateGapError(f"HOMO-LUMO gap {gap:.2e} below {GAP_THRESHOLD:g}; use fermi occupations")
            g = np.zeros(vals.size)
            g[: sysm.n_pairs] = 1.0
            mu = None
        else:
            count = sysm.n_pairs + 2
            while True:
                vals, vecs = lowest_eigenpairs(diag, self.kin_off, count + 1)
                nxt = float(vals[count]) if vals.size > count else math.inf
                vals, vecs = vals[:count], vecs[:, :count]
                g, mu = fermi_occupations(vals, sysm.n_electrons, sysm.temperature)
                if g[-1] < OCCUPATION_CUTOFF or count >= self.grid.n_points:
                    break
                count = min(2 * count, self.grid.n_points)
        n_raw = 2.0 * (vecs**2 @ g) / h
        return vals, vecs, nxt, g, mu, n_raw

    def non_interacting_density(self) -> np.ndarray:
        return self.solve(self.v_ext)[-1]


def _mirror_average(values: np.ndarray) -> np.ndarray:
    return 0.5 * (values + values[::-1])


def _check_mirror(system: SystemSpec, grid: Grid1D) -> None:
    nuclei = np.array(system.nuclei)
    charges = np.array(system.charges)
    order = np.argsort(nuclei)
    mirrored = np.argsort(-nuclei)
    if grid.x_min != -grid.x_max or not (
        np.allclose(nuclei[order], -nuclei[mirrored]) and np.array_equal(charges[order], charges[mirrored])
    ):
        raise ConfigError("reflection_symmetry needs a grid and nuclei symmetric about x = 0")


def _guard(k: int, **arrays) -> None:
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise ScfDivergenceError(f"non-finite {name} at iteration {k}")


def scf_step(ks: KohnSham, n_in: np.ndarray, model: XcModel | None, theta, config: ScfConfig, k: int = 1, noise=None) -> ScfStep:
    """One mixed Kohn-Sham update; ``noise`` is (std, rng) for XC output noise."""
    grid = ks.grid
    w = grid.weights
    h = grid.spacing
    if model is None:
        xc, v_xc, e_xc = None, 0.0, 0.0
    else:
        std, rng = noise if noise else (0.0, None)
        xc = model.evaluate(theta, n_in, grid, noise_std=std, rng=rng)
        v_xc, e_xc = xc.potential, xc.energy
    v_ks = ks.v_ext + ks.hartree.potential(n_in) + v_xc
    _guard(k, v_ks=v_ks)
    vals, vecs, nxt, g, mu, n_raw = ks.solve(v_ks)
    n_mix = _mirror_average(n_raw) if config.reflection_symmetry else n_raw
    n_out = (1.0 - config.mixing) * n_in + config.mixing * n_mix
    f = 2.0 * g
    kinetic = float(np.dot(f, vals) - h * np.dot(v_ks, n_raw))
    external = float(np.dot(w * ks.v_ext, n_raw))
    hartree = ks.hartree.energy(n_raw)
    entropy = -fermi_entropy(g, ks.system.temperature) if ks.system.occupation == "fermi" else 0.0
    energy = EnergyBreakdown(kinetic, external, hartree, float(e_xc), entropy)
    _guard(k, density=n_out, energy=np.array(list(energy.as_dict().values())))
    cache = _StepCache(n_in, xc, v_ks, vals, vecs, nxt, g, mu, n_raw)
    return ScfStep(energy, n_out, float(np.max(np.abs(n_out - n_in))), cache)


def run_scf(
    system: SystemSpec,
    model: XcModel | None,
    theta,
    config: ScfConfig,
    grid: Grid1D,
    kernel: InteractionKernel | None = None,
    *,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ScfTrajectory:
    """Unrolled SCF from the non-interacting density.

    Training mode always runs ``n_iterations`` steps. Inference mode stops
    once the largest density change of a step falls below ``density_tol``.
    """
    if config.reflection_symmetry:
        _check_mirror(system, grid)
    ks = KohnSham(system, grid, kernel)
    theta = None if model is None else np.asarray(theta, dtype=float)
    density = ks.non_interacting_density()
    start = density
    steps: list[ScfStep] = []
    converged = False
    noise = (noise_std, rng) if noise_std > 0 else None
    for k in range(1, config.n_iterations + 1):
        step = scf_step(ks, density, model, theta, config, k, noise)
        steps.append(step)
        density = step.density
        if step.residual < config.density_tol:
            converged = True
            if config.mode == "inference":
                break
    return ScfTrajectory(system, start, steps, converged, config, grid, ks.kernel)


# ----------------------------------------------------------------------------
# backward


@dataclass
class AdjointStats:
    degenerate_pairs: int = 0


class _ShiftedSolver:
    """Applies the resolvent restricted to eigenvectors outside a computed set."""

    def __init__(self, diag: np.ndarray, off: np.ndarray, vectors: np.ndarray, energies: np.ndarray, next_energy: float):
        self.diag, self.off = diag, off
        self.vectors = vectors
        self.energies = energies
        self.next_energy = next_energy

    def _project(self, x: np.ndarray) -> np.ndarray:
        return x - self.vectors @ (self.vectors.T @ x)

    def apply(self, i: int, rhs: np.ndarray) -> np.ndarray:
        """sum over uncomputed j of u_j u_j^T rhs / (lambda_i - lambda_j)."""
        lam = self.energies[i]
        gap = self.next_energy - lam
        if not np.isfinite(gap):
            return np.zeros_like(rhs)
        # shift downwards, away from the uncomputed spectrum, while avoiding
        # accidental coincidence with a computed eigenvalue
        others = np.delete(self.energies, i)
        delta = -0.3 * gap
        for frac in (0.3, 0.2, 0.45, 0.1):
            delta = -frac * gap
            if others.size == 0 or np.min(np.abs(lam + delta - others)) > 1e-3 * gap:
                break
        shift = lam + delta
        dl, d, du, du2, ipiv, info = lapack.dgttrf(-self.off, shift - self.diag, -self.off)
        if info != 0:
            raise ScfDivergenceError("singular shifted system in the eigenvector adjoint")

        def resolve(x):
            return self._project(lapack.dgttrs(dl, d, du, du2, ipiv, x)[0])

        # Neumann series for (lambda - H)^{-1} = sum_k delta^k (shift - H)^{-(k+1)}
        term = resolve(self._project(rhs))
        total = term.copy()
        for _ in range(200):
            term = delta * resolve(term)
            total += term
            if np.linalg.norm(term) <= 1e-16 * np.linalg.norm(total):
                break
        return total


def _eigen_vjp(cache: _StepCache, ks: KohnSham, lam_bar: np.ndarray, vec_bar: np.ndarray, stats: AdjointStats) -> np.ndarray:
    """Potential cotangent from eigenvalue and eigenvector cotangents."""
    u = cache.vectors
    lam = cache.energies
    m = lam.size
    v_bar = (u**2) @ lam_bar
    active = np.flatnonzero(np.any(vec_bar != 0.0, axis=0))
    if active.size == 0:
        return v_bar
    overlap = u.T @ vec_bar  # (j, i) = u_j . ubar_i
    solver = _ShiftedSolver(ks.kin_diag + cache.v_ks, ks.kin_off, u, lam, cache.next_energy)
    for i in active:
        diff = lam[i] - lam
        coef = np.zeros(m)
        for j in range(m):
            if j == i:
                continue
            if abs(diff[j]) < DEGENERACY_THRESHOLD:
                stats.degenerate_pairs += 1
                log.warning("near-degenerate eigenpair (%d, %d) skipped in the adjoint", i, j)
                continue
            coef[j] = overlap[j, i] / diff[j]
        y = u @ coef + solver.apply(i, vec_bar[:, i])
        v_bar += u[:, i] * y
    return v_bar


def scf_backward(
    trajectory: ScfTrajectory,
    model: XcModel | None,
    theta,
    energy_bars: np.ndarray,
    density_bar: np.ndarray,
    sink: GradSink | None,
    stats: AdjointStats | None = None,
) -> np.ndarray:
    """Reverse pass for ``sum_k Ebar_k E_k + nbar . n_final``.

    Parameter gradients are added into ``sink``; the return value is the
    cotangent of the (parameter-independent) starting density.
    """
    stats = stats or AdjointStats()
    ks = KohnSham(trajectory.system, trajectory.grid, trajectory.kernel)
    cfg = trajectory.config
    grid = trajectory.grid
    w = grid.weights
    h = grid.spacing
    gamma = trajectory.system.temperature
    fermi = trajectory.system.occupation == "fermi"
    theta = None if theta is None else np.asarray(theta, dtype=float)
    energy_bars = np.asarray(energy_bars, dtype=float)
    if energy_bars.shape != (len(trajectory.steps),):
        raise ConfigError("one energy cotangent per SCF step is required")
    n_bar = np.array(density_bar, dtype=float)
    for step, e_bar in zip(reversed(trajectory.steps), energy_bars[::-1]):
        c = step.cache
        f = 2.0 * c.g
        n_in_bar = (1.0 - cfg.mixing) * n_bar
        raw_bar = cfg.mixing * (_mirror_average(n_bar) if cfg.reflection_symmetry else n_bar)
        lam_bar = np.zeros_like(c.energies)
        f_bar = np.zeros_like(c.energies)
        v_bar = np.zeros_like(c.v_ks)
        if e_bar != 0.0:
            f_bar += e_bar * c.energies
            lam_bar += e_bar * f
            v_bar -= e_bar * h * c.n_raw
            raw_bar += e_bar * (-h * c.v_ks + w * ks.v_ext + w * ks.hartree.potential(c.n_raw))
        # raw density from orbitals
        f_bar += (c.vectors**2).T @ raw_bar / h
        vec_bar = 2.0 * (raw_bar[:, None] * c.vectors) * f[None, :] / h
        if fermi:
            g_bar = 2.0 * f_bar
            if e_bar != 0.0:
                # d(-gamma S)/dg = 2 gamma ln(g / (1 - g)) = -2 (eps - mu)
                g_bar += e_bar * (-2.0) * (c.energies - c.mu)
            lam_bar += _fermi_vjp(c.g, gamma, g_bar)
        v_bar += _eigen_vjp(c, ks, lam_bar, vec_bar, stats)
        n_in_bar += w * (ks.hartree.matrix @ v_bar)
        if model is not None:
            n_in_bar += model.backward(theta, c.xc, e_bar, v_bar, grid, sink)
        n_bar = n_in_bar
    return n_bar
