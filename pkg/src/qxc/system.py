"""Uniform 1D grids, soft-Coulomb interactions and finite-difference Hamiltonians.

Everything here is in Hartree atomic units. Orbitals live on the grid points of
a box with Dirichlet walls one spacing beyond each end, so the kinetic operator
is the three-point stencil and the Hamiltonian is symmetric tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import QxcError


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise QxcError("grid needs at least two points")
        if not self.x_max > self.x_min:
            raise QxcError("grid requires x_max > x_min")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def describe(self) -> str:
        return f"{self.x_min!r} {self.x_max!r} {self.n_points}"


@dataclass(frozen=True)
class InteractionKernel:
    """Soft-Coulomb kernel ``1/sqrt(dx^2 + softening^2)``.

    ``strength`` scales the electron-electron part only; nuclear attraction
    always uses the bare kernel. Setting it to 0 switches interaction off.
    """

    softening: float = 1.0
    strength: float = 1.0
    kind: str = "soft_coulomb"

    def __post_init__(self) -> None:
        if self.kind != "soft_coulomb":
            raise QxcError(f"unsupported kernel kind {self.kind!r}")
        if self.softening <= 0:
            raise QxcError("kernel softening must be positive")

    def __call__(self, dx: np.ndarray | float) -> np.ndarray:
        return 1.0 / np.sqrt(np.square(dx) + self.softening**2)


@dataclass(frozen=True)
class SystemSpec:
    nuclei: tuple[float, ...]
    charges: tuple[float, ...]
    n_electrons: int
    occupation: str = "integer"
    temperature: float = 1e-2
    label: str = ""
    separation: float = 0.0

    def __post_init__(self) -> None:
        if len(self.nuclei) != len(self.charges):
            raise QxcError("nuclei and charges differ in length")
        if self.n_electrons <= 0 or self.n_electrons % 2:
            raise QxcError("closed-shell systems need a positive even electron count")
        if self.occupation not in ("integer", "fermi"):
            raise QxcError(f"unknown occupation mode {self.occupation!r}")
        if self.occupation == "fermi" and self.temperature <= 0:
            raise QxcError("fermi occupations need a positive temperature")

    @property
    def n_pairs(self) -> int:
        return self.n_electrons // 2


# Registry of geometries keyed by label; each maps a separation to nuclei.
def _h2(r: float) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    return (-r / 2, r / 2), (1.0, 1.0), 2


def _h4(r: float) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    return (-1.5 * r, -0.5 * r, 0.5 * r, 1.5 * r), (1.0,) * 4, 4


def _h2h2(r: float, bond: float = 1.6) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    # two molecules at fixed bond length, centres separated by r
    c = r / 2
    return (-c - bond / 2, -c + bond / 2, c - bond / 2, c + bond / 2), (1.0,) * 4, 4


def _he(_: float) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    return (0.0,), (2.0,), 2


GEOMETRIES = {"H2": _h2, "H4": _h4, "H2H2": _h2h2, "He": _he}


def make_system(label: str, separation: float, occupation: str = "integer", temperature: float = 1e-2) -> SystemSpec:
    try:
        builder = GEOMETRIES[label]
    except KeyError:
        raise QxcError(f"unknown system label {label!r}; known: {sorted(GEOMETRIES)}") from None
    nuclei, charges, n_e = builder(float(separation))
    return SystemSpec(nuclei, charges, n_e, occupation, temperature, label, float(separation))


def build_grid(x_min: float, x_max: float, n_points: int) -> Grid1D:
    return Grid1D(float(x_min), float(x_max), int(n_points))


def integrate(values: np.ndarray, grid: Grid1D) -> float:
    return float(np.dot(grid.weights, values))


def external_potential(system: SystemSpec, grid: Grid1D, kernel: InteractionKernel) -> np.ndarray:
    bare = InteractionKernel(kernel.softening)
    v = np.zeros(grid.n_points)
    for pos, z in zip(system.nuclei, system.charges):
        v -= z * bare(grid.points - pos)
    return v


def nuclear_repulsion(system: SystemSpec, kernel: InteractionKernel) -> float:
    bare = InteractionKernel(kernel.softening)
    e = 0.0
    for a in range(len(system.nuclei)):
        for b in range(a + 1, len(system.nuclei)):
            e += system.charges[a] * system.charges[b] * float(bare(system.nuclei[a] - system.nuclei[b]))
    return e


def interaction_matrix(grid: Grid1D, kernel: InteractionKernel) -> np.ndarray:
    """Pairwise electron-electron kernel ``strength * K(x_i - x_j)``."""
    x = grid.points
    return kernel.strength * kernel(x[:, None] - x[None, :])


@dataclass
class HartreeOperator:
    """Caches the weighted kernel so repeated potentials are one matvec."""

    grid: Grid1D
    kernel: InteractionKernel
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.matrix = interaction_matrix(self.grid, self.kernel)

    def potential(self, density: np.ndarray) -> np.ndarray:
        return self.matrix @ (self.grid.weights * density)

    def energy(self, density: np.ndarray) -> float:
        return 0.5 * float(np.dot(self.grid.weights * density, self.potential(density)))


def hartree_potential(density: np.ndarray, grid: Grid1D, kernel: InteractionKernel) -> np.ndarray:
    return HartreeOperator(grid, kernel).potential(density)


def hartree_energy(density: np.ndarray, grid: Grid1D, kernel: InteractionKernel) -> float:
    return HartreeOperator(grid, kernel).energy(density)


def kinetic_bands(grid: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the three-point kinetic operator."""
    h2 = grid.spacing**2
    return np.full(grid.n_points, 1.0 / h2), np.full(grid.n_points - 1, -0.5 / h2)


def hamiltonian(grid: Grid1D, potential: np.ndarray) -> np.ndarray:
    diag, off = kinetic_bands(grid)
    return np.diag(diag + potential) + np.diag(off, 1) + np.diag(off, -1)


def solve_eigen(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full ascending eigendecomposition of a real symmetric matrix."""
    if not np.allclose(matrix, matrix.T, atol=1e-12, rtol=0):
        raise QxcError("matrix is not symmetric")
    return np.linalg.eigh(matrix)


def lowest_eigenpairs(diag: np.ndarray, off: np.ndarray, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``count`` eigenpairs of a symmetric tridiagonal matrix.

    Eigenvectors are Euclidean-orthonormal columns.
    """
    count = min(count, diag.size)
    return linalg.eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))


def orbitals_from_vectors(vectors: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Scale Euclidean eigenvectors so that ``sum_i h phi_i^2 = 1``."""
    return vectors / np.sqrt(grid.spacing)
