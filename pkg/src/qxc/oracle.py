"""Exact reference data for two-electron 1D systems, plus dataset persistence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .errors import DatasetFormatError, OracleConvergenceError, QxcError
from .system import (
    Grid1D,
    InteractionKernel,
    SystemSpec,
    build_grid,
    external_potential,
    integrate,
    interaction_matrix,
    kinetic_bands,
    lowest_eigenpairs,
    make_system,
    orbitals_from_vectors,
)

FORMAT_VERSION = 1
_MAGIC = "qxc-dataset"


@dataclass
class ReferenceRecord:
    spec: SystemSpec
    energy: float
    density: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReferenceRecord):
            return NotImplemented
        return (
            self.spec.label == other.spec.label
            and self.spec.separation == other.spec.separation
            and self.energy == other.energy
            and np.array_equal(self.density, other.density)
        )


@dataclass
class Dataset:
    records: list[ReferenceRecord]
    grid: Grid1D
    kernel: InteractionKernel = field(default_factory=InteractionKernel)
    provenance: str = ""
    version: int = FORMAT_VERSION

    def __len__(self) -> int:
        return len(self.records)


def solve_one_electron(spec: SystemSpec, grid: Grid1D, kernel: InteractionKernel | None = None) -> tuple[float, np.ndarray]:
    if not spec.nuclei:
        raise QxcError("one-electron solve needs at least one nucleus")
    kernel = kernel or InteractionKernel()
    diag, off = kinetic_bands(grid)
    vals, vecs = lowest_eigenpairs(diag + external_potential(spec, grid, kernel), off, 1)
    orbital = orbitals_from_vectors(vecs[:, 0], grid)
    orbital /= math.sqrt(integrate(orbital**2, grid))
    return float(vals[0]), orbital


class _PairHamiltonian:
    """Applies h(x)I + I h(y) + W to a flattened two-particle amplitude."""

    def __init__(self, spec: SystemSpec, grid: Grid1D, kernel: InteractionKernel):
        kin_diag, off = kinetic_bands(grid)
        self.n = grid.n_points
        self.diag = kin_diag + external_potential(spec, grid, kernel)
        self.off = off[0]
        self.pair = interaction_matrix(grid, kernel)
        self.onsite = self.diag[:, None] + self.diag[None, :] + self.pair

    def apply(self, flat: np.ndarray) -> np.ndarray:
        amp = flat.reshape(self.n, self.n)
        out = self.onsite * amp
        out[1:, :] += self.off * amp[:-1, :]
        out[:-1, :] += self.off * amp[1:, :]
        out[:, 1:] += self.off * amp[:, :-1]
        out[:, :-1] += self.off * amp[:, 1:]
        return out.ravel()

    def dense(self) -> np.ndarray:
        eye = np.eye(self.n)
        h = np.diag(self.diag) + self.off * (np.eye(self.n, k=1) + np.eye(self.n, k=-1))
        return np.kron(h, eye) + np.kron(eye, h) + np.diag(self.pair.ravel())


def _record(spec: SystemSpec, grid: Grid1D, energy: float, amplitude: np.ndarray) -> ReferenceRecord:
    amp = amplitude.reshape(grid.n_points, grid.n_points)
    amp = 0.5 * (amp + amp.T)
    amp /= np.linalg.norm(amp)
    density = 2.0 * np.sum(amp**2, axis=1) / grid.spacing
    return ReferenceRecord(spec, float(energy), density)


def solve_two_electron(
    spec: SystemSpec,
    grid: Grid1D,
    kernel: InteractionKernel | None = None,
    *,
    tol: float = 1e-9,
    max_iter: int = 20000,
    seed: int = 0,
) -> ReferenceRecord:
    """Singlet ground state by Lanczos on the implicit two-particle Hamiltonian.

    The Hamiltonian is stoquastic, so its global ground state is the nodeless
    symmetric one and no explicit projection is needed. Convergence is
    accepted when the residual norm of the unit eigenvector is below ``tol``.
    """
    if spec.n_electrons != 2:
        raise QxcError(f"two-electron solver got {spec.n_electrons} electrons")
    kernel = kernel or InteractionKernel()
    op = _PairHamiltonian(spec, grid, kernel)
    dim = op.n * op.n
    linop = LinearOperator((dim, dim), matvec=op.apply, dtype=np.float64)

    _, orb = solve_one_electron(spec, grid, kernel)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((op.n, op.n)) * 1e-3
    start = np.outer(orb, orb) + noise + noise.T
    start = start.ravel() / np.linalg.norm(start)

    try:
        vals, vecs = eigsh(linop, k=1, which="SA", v0=start, tol=1e-14, maxiter=max_iter, ncv=40)
    except ArpackNoConvergence as exc:
        raise OracleConvergenceError(f"Lanczos did not converge for {spec.label} R={spec.separation}") from exc
    vec = vecs[:, 0]
    resid = float(np.linalg.norm(op.apply(vec) - vals[0] * vec))
    if resid > tol:
        raise OracleConvergenceError(f"residual {resid:.3e} above {tol:.1e} for {spec.label} R={spec.separation}")
    return _record(spec, grid, vals[0], vec)


def solve_two_electron_dense(spec: SystemSpec, grid: Grid1D, kernel: InteractionKernel | None = None) -> ReferenceRecord:
    """Dense reference solve in the symmetric subspace; only for small grids."""
    kernel = kernel or InteractionKernel()
    op = _PairHamiltonian(spec, grid, kernel)
    n = op.n
    iu, ju = np.triu_indices(n)
    # orthonormal symmetric basis: e_ii, (e_ij + e_ji)/sqrt2
    basis_scale = np.where(iu == ju, 1.0, 1.0 / math.sqrt(2.0))
    full = op.dense()
    cols = np.zeros((n * n, iu.size))
    k = np.arange(iu.size)
    cols[iu * n + ju, k] = basis_scale
    cols[ju * n + iu, k] = basis_scale
    reduced = cols.T @ full @ cols
    vals, vecs = np.linalg.eigh(reduced)
    return _record(spec, grid, vals[0], cols @ vecs[:, 0])


def generate_dataset(
    specs: list[SystemSpec],
    grid: Grid1D,
    kernel: InteractionKernel | None = None,
    *,
    provenance: str = "exact diagonalization",
    seed: int = 0,
) -> Dataset:
    kernel = kernel or InteractionKernel()
    records = []
    for spec in specs:
        try:
            records.append(solve_two_electron(spec, grid, kernel, seed=seed))
        except QxcError as exc:
            raise type(exc)(f"{spec.label} R={spec.separation}: {exc}") from exc
    return Dataset(records, grid, kernel, provenance)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    g, k = dataset.grid, dataset.kernel
    lines = [
        f"# {_MAGIC} {dataset.version}",
        f"# grid {g.x_min!r} {g.x_max!r} {g.n_points}",
        f"# kernel {k.kind} {k.softening!r} {k.strength!r}",
        f"# provenance {dataset.provenance.replace(chr(10), ' ')}",
        "# columns label R E_ref density...",
    ]
    for rec in dataset.records:
        values = " ".join(f"{v:.17g}" for v in rec.density)
        lines.append(f"{rec.spec.label} {rec.spec.separation:.17g} {rec.energy:.17g} {values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header_value(lines: list[str], key: str) -> list[str]:
    for line in lines:
        parts = line[1:].split()
        if parts and parts[0] == key:
            return parts[1:]
    raise DatasetFormatError(f"missing header field {key!r}")


def load_dataset(path: str | Path, occupation: str = "integer", temperature: float = 1e-2) -> Dataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = [ln for ln in text if ln.startswith("#")]
    if not header or header[0].split()[1:2] != [_MAGIC]:
        raise DatasetFormatError("not a dataset file (missing magic header)")
    try:
        version = int(header[0].split()[2])
    except (IndexError, ValueError):
        raise DatasetFormatError("unreadable format version") from None
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"format version {version} not supported (expected {FORMAT_VERSION})")
    try:
        gx = _header_value(header, "grid")
        grid = build_grid(float(gx[0]), float(gx[1]), int(gx[2]))
        kx = _header_value(header, "kernel")
        kernel = InteractionKernel(softening=float(kx[1]), strength=float(kx[2]), kind=kx[0])
    except (IndexError, ValueError) as exc:
        raise DatasetFormatError(f"malformed header: {exc}") from None
    provenance = " ".join(_header_value(header, "provenance"))

    records = []
    for lineno, line in enumerate(text, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3:
            raise DatasetFormatError(f"line {lineno}: malformed row")
        try:
            sep = float(fields[1])
            energy = float(fields[2])
            density = np.array([float(v) for v in fields[3:]])
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: non-numeric field") from None
        if density.size != grid.n_points:
            raise DatasetFormatError(
                f"line {lineno}: density has {density.size} values, grid has {grid.n_points}"
            )
        try:
            spec = make_system(fields[0], sep, occupation, temperature)
        except QxcError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        records.append(ReferenceRecord(spec, energy, density))
    return Dataset(records, grid, kernel, provenance, version)
