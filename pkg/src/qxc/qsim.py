"""Batched statevector and density-matrix simulation of data re-uploading circuits.

Conventions:
  * qubit 0 is the most significant bit of a basis index;
  * rotations are ``exp(-i phi P / 2)`` for a Pauli ``P``;
  * the readout is total magnetization ``sum_q Z_q``.

A circuit is compiled once into a flat list of ``Op`` records. Angles come
either from the trainable vector ``theta`` or from per-sample data slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CircuitError

FEATURE_MAPS = ("product", "chebyshev", "amplitude")
ENTANGLERS = ("cnot", "rzz")
DENSITY_QUBIT_CAP = 8
HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class CircuitSpec:
    """Hardware-efficient circuit layout.

    Each re-upload block applies the feature map, then ``depth`` layers of a
    ZXZ rotation on every qubit followed by the alternating entangler ladder.
    ``broadcast`` feeds one scalar to every qubit; otherwise input ``k`` goes
    to qubit ``k`` and the remaining qubits stay at angle zero.
    ``final_rotations`` appends one more ZXZ layer after the last block.
    """

    n_qubits: int
    depth: int
    reuploads: int = 1
    feature_map: str = "product"
    entangler: str = "cnot"
    n_inputs: int = 1
    broadcast: bool = True
    final_rotations: bool = False

    def __post_init__(self) -> None:
        if self.n_qubits < 1 or self.depth < 0 or self.reuploads < 1:
            raise CircuitError("need n_qubits >= 1, depth >= 0, reuploads >= 1")
        if self.feature_map not in FEATURE_MAPS:
            raise CircuitError(f"unknown feature map {self.feature_map!r}")
        if self.entangler not in ENTANGLERS:
            raise CircuitError(f"unknown entangler {self.entangler!r}")
        if self.feature_map == "amplitude":
            if self.reuploads != 1:
                raise CircuitError("amplitude encoding prepares the state once; reuploads must be 1")
            if self.n_inputs > self.dim:
                raise CircuitError(f"{self.n_inputs} amplitudes do not fit in {self.n_qubits} qubits")
        elif self.broadcast:
            if self.n_inputs != 1:
                raise CircuitError("broadcast encoding takes a single scalar input")
        elif self.n_inputs > self.n_qubits:
            raise CircuitError(f"{self.n_inputs} inputs exceed {self.n_qubits} qubits")

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    @property
    def pairs(self) -> list[tuple[int, int]]:
        first = [(i, i + 1) for i in range(0, self.n_qubits - 1, 2)]
        second = [(i, i + 1) for i in range(1, self.n_qubits - 1, 2)]
        return first + second

    @property
    def n_rotation_params(self) -> int:
        layers = self.reuploads * self.depth + (1 if self.final_rotations else 0)
        return 3 * self.n_qubits * layers

    @property
    def n_params(self) -> int:
        extra = self.reuploads * self.depth * len(self.pairs) if self.entangler == "rzz" else 0
        return self.n_rotation_params + extra

    @property
    def data_first(self) -> bool:
        """True when all data enters before any trainable gate."""
        return self.reuploads == 1


@dataclass(frozen=True)
class NoiseModel:
    """Single-qubit channels applied after every gate on the qubits it touches.

    ``dephasing = p`` scales coherences by ``1 - p`` (Kraus weights
    ``1 - p/2`` on I and ``p/2`` on Z); ``damping = p`` is amplitude damping
    with decay probability ``p``.
    """

    dephasing: float = 0.0
    damping: float = 0.0

    def __post_init__(self) -> None:
        for p in (self.dephasing, self.damping):
            if not 0.0 <= p <= 1.0:
                raise CircuitError("noise probabilities must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.dephasing == 0.0 and self.damping == 0.0

    def kraus(self) -> list[list[np.ndarray]]:
        channels = []
        if self.dephasing > 0:
            q = 0.5 * self.dephasing
            channels.append([math.sqrt(1 - q) * np.eye(2), math.sqrt(q) * np.diag([1.0, -1.0])])
        if self.damping > 0:
            p = self.damping
            channels.append([np.array([[1.0, 0.0], [0.0, math.sqrt(1 - p)]]), np.array([[0.0, math.sqrt(p)], [0.0, 0.0]])])
        return channels


@dataclass(frozen=True)
class Op:
    kind: str  # "rot" or "cnot"
    qubits: tuple[int, ...]
    axis: str = ""
    source: str = ""  # "theta" or "data"
    index: int = -1


@dataclass(frozen=True)
class Compiled:
    spec: CircuitSpec
    ops: tuple[Op, ...]
    slot_input: np.ndarray  # input index feeding each data slot
    slot_degree: np.ndarray  # Chebyshev degree (qubit number, 1-based) of each slot

    @property
    def n_slots(self) -> int:
        return self.slot_input.size


def theta_index(spec: CircuitSpec, layer: int, depth: int, qubit: int, axis: int) -> int:
    return ((layer * spec.depth + depth) * spec.n_qubits + qubit) * 3 + axis


@lru_cache(maxsize=64)
def compile_circuit(spec: CircuitSpec) -> Compiled:
    ops: list[Op] = []
    slot_input: list[int] = []
    slot_degree: list[int] = []
    rzz_base = spec.n_rotation_params
    pairs = spec.pairs

    def zxz(base: int) -> None:
        for q in range(spec.n_qubits):
            # operator order Z1 X Z2 means Z2 acts first
            ops.append(Op("rot", (q,), "Z", "theta", base + 3 * q + 2))
            ops.append(Op("rot", (q,), "X", "theta", base + 3 * q + 1))
            ops.append(Op("rot", (q,), "Z", "theta", base + 3 * q + 0))

    for layer in range(spec.reuploads):
        if spec.feature_map != "amplitude":
            encoded = range(spec.n_qubits) if spec.broadcast else range(spec.n_inputs)
            for q in encoded:
                ops.append(Op("rot", (q,), "Y", "data", len(slot_input)))
                slot_input.append(0 if spec.broadcast else q)
                slot_degree.append(q + 1)
        for d in range(spec.depth):
            zxz(theta_index(spec, layer, d, 0, 0))
            for p, (a, b) in enumerate(pairs):
                if spec.entangler == "cnot":
                    ops.append(Op("cnot", (a, b)))
                else:
                    k = rzz_base + (layer * spec.depth + d) * len(pairs) + p
                    ops.append(Op("cnot", (a, b)))
                    ops.append(Op("rot", (b,), "Z", "theta", k))
                    ops.append(Op("cnot", (a, b)))
    if spec.final_rotations:
        zxz(3 * spec.n_qubits * spec.reuploads * spec.depth)
    return Compiled(spec, tuple(ops), np.array(slot_input, dtype=int), np.array(slot_degree, dtype=float))


# ----------------------------------------------------------------------------
# feature maps


def encode(compiled: Compiled, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Data-slot angles and their first and second derivatives w.r.t. the input.

    ``inputs`` has shape (B, n_inputs); the outputs have shape (B, n_slots).
    """
    x = inputs[:, compiled.slot_input]
    if compiled.spec.feature_map == "product":
        return x.copy(), np.ones_like(x), np.zeros_like(x)
    if np.any(np.abs(x) > 1.0):
        raise CircuitError("Chebyshev map needs inputs in [-1, 1]")
    k = compiled.slot_degree[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sqrt(1.0 - x * x)
        d1 = -2.0 * k / s
        d2 = -2.0 * k * x / s**3
    return 2.0 * k * np.arccos(x), d1, d2


def amplitude_state(inputs: np.ndarray, n_qubits: int) -> np.ndarray:
    """Normalized, zero-padded amplitude encoding; shape (B, 2**n_qubits)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise CircuitError("cannot amplitude-encode a zero vector")
    out = np.zeros((x.shape[0], 1 << n_qubits))
    out[:, : x.shape[1]] = x / norm
    return out


def product_state(angles: np.ndarray, n_qubits: int, slot_qubits: np.ndarray) -> np.ndarray:
    """Real product state from RY angles on the given qubits (others in |0>)."""
    b = angles.shape[0]
    state = np.ones((b, 1))
    col = {int(q): i for i, q in enumerate(slot_qubits)}
    for q in range(n_qubits):
        if q in col:
            a = angles[:, col[q]] * 0.5
            factor = np.stack([np.cos(a), np.sin(a)], axis=1)
        else:
            factor = np.tile([1.0, 0.0], (b, 1))
        state = (state[:, :, None] * factor[:, None, :]).reshape(b, -1)
    return state


# ----------------------------------------------------------------------------
# gate kernels on batched states of shape (B, 2**n)


def _rot_coeffs(axis: str, phi: np.ndarray | float):
    c = np.cos(0.5 * phi)
    s = np.sin(0.5 * phi)
    if axis == "X":
        return c, -1j * s, -1j * s, c
    if axis == "Y":
        return c, -s, s, c
    return np.exp(-0.5j * phi), 0.0, 0.0, np.exp(0.5j * phi)


def _apply_1q(state: np.ndarray, n: int, q: int, m00, m01, m10, m11) -> np.ndarray:
    b = state.shape[0]
    v = state.reshape(b, 1 << q, 2, -1)
    shape = (b, 1, 1)
    m00, m01, m10, m11 = (np.reshape(m, shape) if np.ndim(m) else m for m in (m00, m01, m10, m11))
    a0 = v[:, :, 0, :]
    a1 = v[:, :, 1, :]
    out = np.empty(v.shape, dtype=np.result_type(state, complex))
    out[:, :, 0, :] = m00 * a0 + m01 * a1
    out[:, :, 1, :] = m10 * a0 + m11 * a1
    return out.reshape(state.shape)


def _apply_pauli(state: np.ndarray, q: int, axis: str) -> np.ndarray:
    if axis == "X":
        return _apply_1q(state, 0, q, 0.0, 1.0, 1.0, 0.0)
    if axis == "Y":
        return _apply_1q(state, 0, q, 0.0, -1j, 1j, 0.0)
    return _apply_1q(state, 0, q, 1.0, 0.0, 0.0, -1.0)


@lru_cache(maxsize=256)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


@lru_cache(maxsize=16)
def magnetization_diagonal(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    ones = np.zeros(1 << n)
    for q in range(n):
        ones += (idx >> q) & 1
    return n - 2.0 * ones


def _angle(op: Op, theta: np.ndarray, angles: np.ndarray | None):
    if op.source == "theta":
        return theta[..., op.index]
    return angles[:, op.index]


def _forward(compiled: Compiled, theta: np.ndarray, angles: np.ndarray | None, init: np.ndarray) -> np.ndarray:
    n = compiled.spec.n_qubits
    state = init.astype(complex)
    for op in compiled.ops:
        if op.kind == "cnot":
            state = state[:, _cnot_perm(n, *op.qubits)]
        else:
            state = _apply_1q(state, n, op.qubits[0], *_rot_coeffs(op.axis, _angle(op, theta, angles)))
    return state


def _initial(compiled: Compiled, batch: int, amplitudes: np.ndarray | None) -> np.ndarray:
    if amplitudes is not None:
        return amplitudes
    init = np.zeros((batch, compiled.spec.dim))
    init[:, 0] = 1.0
    return init


def _prepare(spec: CircuitSpec, inputs) -> tuple[Compiled, np.ndarray | None, np.ndarray | None, int, bool]:
    compiled = compile_circuit(spec)
    x = np.asarray(inputs, dtype=float)
    single = x.ndim <= 1
    x = np.atleast_2d(x) if spec.feature_map == "amplitude" else x.reshape(-1, spec.n_inputs)
    if spec.feature_map == "amplitude":
        return compiled, None, amplitude_state(x, spec.n_qubits), x.shape[0], single
    return compiled, encode(compiled, x)[0], None, x.shape[0], single


def _check_theta(spec: CircuitSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.n_params:
        raise CircuitError(f"expected {spec.n_params} parameters, got {theta.shape[-1]}")
    return theta


def run_statevector(spec: CircuitSpec, theta, inputs) -> np.ndarray:
    """Final state(s). ``inputs`` of shape (n_inputs,) gives one state of shape (D,)."""
    theta = _check_theta(spec, theta)
    compiled, angles, amps, batch, single = _prepare(spec, inputs)
    state = _forward(compiled, theta, angles, _initial(compiled, batch, amps))
    return state[0] if single else state


@dataclass(frozen=True)
class DensityMatrixState:
    """Density matrix (D, D) or batch (B, D, D)."""

    matrix: np.ndarray

    @property
    def n_qubits(self) -> int:
        return int(round(math.log2(self.matrix.shape[-1])))


def probabilities(state) -> np.ndarray:
    if isinstance(state, DensityMatrixState):
        return np.clip(np.real(np.diagonal(state.matrix, axis1=-2, axis2=-1)), 0.0, None)
    return np.abs(np.asarray(state)) ** 2


def expectation_magnetization(state) -> np.ndarray | float:
    """Total magnetization of a statevector (D,)/(B, D) or a ``DensityMatrixState``."""
    probs = probabilities(state)
    n = int(round(math.log2(probs.shape[-1])))
    out = probs @ magnetization_diagonal(n)
    return float(out) if np.ndim(out) == 0 else out


def sample_magnetization(state, n_shots: int, rng: np.random.Generator) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Shot estimate of total magnetization and its standard error.

    Accepts statevectors or density matrices, single or batched.
    """
    if n_shots < 1:
        raise CircuitError("n_shots must be positive")
    probs = state if isinstance(state, np.ndarray) and np.isrealobj(state) else probabilities(state)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    probs = probs / probs.sum(axis=1, keepdims=True)
    n = int(round(math.log2(probs.shape[1])))
    m = magnetization_diagonal(n)
    counts = rng.multinomial(n_shots, probs)
    mean = counts @ m / n_shots
    if n_shots > 1:
        var = (counts @ (m * m) - n_shots * mean**2) / (n_shots - 1)
        err = np.sqrt(np.clip(var, 0.0, None) / n_shots)
    else:
        err = np.zeros_like(mean)
    if single:
        return float(mean[0]), float(err[0])
    return mean, err


# ----------------------------------------------------------------------------
# density matrices, stored as vectorized 2n-qubit states (row qubits first)


def _superop(kraus: list[np.ndarray]) -> np.ndarray:
    """4x4 matrix acting on (row, column) bit pairs for rho -> sum K rho K^dagger."""
    return sum(np.kron(k, np.conj(k)) for k in kraus)


def _apply_pair(vec: np.ndarray, n2: int, a: int, b: int, mat: np.ndarray) -> np.ndarray:
    bsz = vec.shape[0]
    t = vec.reshape((bsz,) + (2,) * n2)
    t = np.tensordot(mat.reshape(2, 2, 2, 2), t, axes=([2, 3], [1 + a, 1 + b]))
    t = np.moveaxis(t, [0, 1], [1 + a, 1 + b])
    return t.reshape(bsz, -1)


def _forward_density(compiled: Compiled, theta, angles, init: np.ndarray, noise: NoiseModel) -> np.ndarray:
    n = compiled.spec.n_qubits
    n2 = 2 * n
    vec = np.einsum("bi,bj->bij", init, np.conj(init)).reshape(init.shape[0], -1).astype(complex)
    supers = [_superop(k) for k in noise.kraus()]
    for op in compiled.ops:
        if op.kind == "cnot":
            c, t = op.qubits
            vec = vec[:, _cnot_perm(n2, c, t)]
            vec = vec[:, _cnot_perm(n2, c + n, t + n)]
        else:
            q = op.qubits[0]
            m00, m01, m10, m11 = _rot_coeffs(op.axis, _angle(op, theta, angles))
            vec = _apply_1q(vec, n2, q, m00, m01, m10, m11)
            vec = _apply_1q(vec, n2, q + n, np.conj(m00), np.conj(m01), np.conj(m10), np.conj(m11))
        for s in supers:
            for q in op.qubits:
                vec = _apply_pair(vec, n2, q, q + n, s)
    d = compiled.spec.dim
    return vec.reshape(-1, d, d)


def run_density_matrix(spec: CircuitSpec, theta, inputs, noise: NoiseModel | None = None) -> DensityMatrixState:
    if spec.n_qubits > DENSITY_QUBIT_CAP:
        raise CircuitError(f"density-matrix simulation capped at {DENSITY_QUBIT_CAP} qubits")
    theta = _check_theta(spec, theta)
    compiled, angles, amps, batch, single = _prepare(spec, inputs)
    rho = _forward_density(compiled, theta, angles, _initial(compiled, batch, amps), noise or NoiseModel())
    return DensityMatrixState(rho[0] if single else rho)


def apply_channel(rho: np.ndarray, qubit: int, n_qubits: int, noise: NoiseModel) -> np.ndarray:
    """Apply the configured channels once to ``qubit`` of a single density matrix."""
    vec = np.asarray(rho, dtype=complex).reshape(1, -1)
    for s in (_superop(k) for k in noise.kraus()):
        vec = _apply_pair(vec, 2 * n_qubits, qubit, qubit + n_qubits, s)
    d = 1 << n_qubits
    return vec.reshape(d, d)


# ----------------------------------------------------------------------------
# expectation engine used by the parameter-shift paths


@dataclass(frozen=True)
class Readout:
    """How expectations are estimated: exact, with gate noise, and/or with shots."""

    noise: NoiseModel = NoiseModel()
    shots: int | None = None

    @property
    def exact(self) -> bool:
        return self.noise.is_identity and self.shots is None


def evaluate(
    compiled: Compiled,
    theta: np.ndarray,
    angles: np.ndarray | None,
    init: np.ndarray,
    readout: Readout = Readout(),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Magnetization for each batch row; ``theta`` may be (P,) or (B, P)."""
    if readout.noise.is_identity:
        state = _forward(compiled, theta, angles, init)
        probs = np.abs(state) ** 2
    else:
        if compiled.spec.n_qubits > DENSITY_QUBIT_CAP:
            raise CircuitError(f"density-matrix simulation capped at {DENSITY_QUBIT_CAP} qubits")
        rho = _forward_density(compiled, theta, angles, init, readout.noise)
        probs = np.clip(np.real(np.diagonal(rho, axis1=1, axis2=2)), 0.0, None)
    if readout.shots is None:
        return probs @ magnetization_diagonal(compiled.spec.n_qubits)
    if rng is None:
        raise CircuitError("shot sampling needs an rng")
    return sample_magnetization(probs, readout.shots, rng)[0]


def _shift_rows(base: np.ndarray, column: int, shift: float) -> np.ndarray:
    out = np.array(base, dtype=float, copy=True)
    out[..., column] += shift
    return out


def psr_gradient(spec: CircuitSpec, theta, inputs, which=None, readout: Readout = Readout(), rng=None) -> np.ndarray:
    """Parameter-shift derivative of the magnetization w.r.t. chosen ``theta`` entries.

    Every trainable angle is a single-qubit Pauli rotation, so the two-term
    rule with shifts of pi/2 is exact.
    """
    theta = _check_theta(spec, theta)
    which = list(range(spec.n_params)) if which is None else [int(w) for w in which]
    for w in which:
        if not 0 <= w < spec.n_params:
            raise CircuitError(f"parameter index {w} outside the circuit")
    compiled, angles, amps, batch, single = _prepare(spec, inputs)
    init = _initial(compiled, batch, amps)
    grads = []
    for w in which:
        plus = evaluate(compiled, _shift_rows(theta, w, HALF_PI), angles, init, readout, rng)
        minus = evaluate(compiled, _shift_rows(theta, w, -HALF_PI), angles, init, readout, rng)
        grads.append(0.5 * (plus - minus))
    out = np.stack(grads, axis=-1)
    return out[0] if single else out


def slot_gradient(compiled: Compiled, theta, angles: np.ndarray, init, readout: Readout = Readout(), rng=None) -> np.ndarray:
    """Parameter-shift derivative w.r.t. every data-slot angle; shape (B, S)."""
    cols = []
    for s in range(compiled.n_slots):
        plus = evaluate(compiled, theta, _shift_rows(angles, s, HALF_PI), init, readout, rng)
        minus = evaluate(compiled, theta, _shift_rows(angles, s, -HALF_PI), init, readout, rng)
        cols.append(0.5 * (plus - minus))
    return np.stack(cols, axis=1) if cols else np.zeros((angles.shape[0], 0))


def fold_slots(compiled: Compiled, per_slot: np.ndarray) -> np.ndarray:
    """Sum per-slot quantities onto the inputs they came from."""
    out = np.zeros((per_slot.shape[0], compiled.spec.n_inputs))
    np.add.at(out.T, compiled.slot_input, per_slot.T)
    return out


def input_gradient(spec: CircuitSpec, theta, inputs, readout: Readout = Readout(), rng=None) -> np.ndarray:
    """d<M>/d(input) through the feature map, using parameter shifts on data gates."""
    if spec.feature_map == "amplitude":
        raise CircuitError("input gradients by parameter shift need a rotation feature map")
    theta = _check_theta(spec, theta)
    compiled = compile_circuit(spec)
    x = np.asarray(inputs, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(-1, spec.n_inputs)
    angles, d1, _ = encode(compiled, x)
    init = _initial(compiled, x.shape[0], None)
    grad = fold_slots(compiled, slot_gradient(compiled, theta, angles, init, readout, rng) * d1)
    return grad[0] if single else grad


# ----------------------------------------------------------------------------
# exact reverse-mode (adjoint) differentiation


def adjoint_gradient(
    compiled: Compiled,
    theta: np.ndarray,
    angles: np.ndarray | None,
    init: np.ndarray,
    weights: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values f_b and gradients of ``sum_b weights_b f_b``.

    Returns (values (B,), d/dtheta (P,), d/d slot angle (B, S)). One forward
    and one backward sweep; exact for noiseless statevectors.
    """
    n = compiled.spec.n_qubits
    psi = _forward(compiled, theta, angles, init)
    diag = magnetization_diagonal(n)
    values = (np.abs(psi) ** 2) @ diag
    lam = psi * diag[None, :] * np.asarray(weights, dtype=float)[:, None]
    g_theta = np.zeros(theta.shape[-1])
    g_slot = np.zeros((init.shape[0], compiled.n_slots))
    for op in reversed(compiled.ops):
        if op.kind == "cnot":
            perm = _cnot_perm(n, *op.qubits)
            psi = psi[:, perm]
            lam = lam[:, perm]
            continue
        q = op.qubits[0]
        contrib = np.imag(np.sum(np.conj(lam) * _apply_pauli(psi, q, op.axis), axis=1))
        if op.source == "theta":
            g_theta[op.index] += contrib.sum()
        else:
            g_slot[:, op.index] += contrib
        inv = _rot_coeffs(op.axis, -_angle(op, theta, angles))
        psi = _apply_1q(psi, n, q, *inv)
        lam = _apply_1q(lam, n, q, *inv)
    return values, g_theta, g_slot


def ansatz_unitary(compiled: Compiled, theta: np.ndarray) -> np.ndarray:
    """Unitary of the trainable part of a data-first circuit."""
    if not compiled.spec.data_first:
        raise CircuitError("ansatz unitary is defined only for single-upload circuits")
    d = compiled.spec.dim
    return _forward(trainable_part(compiled), theta, None, np.eye(d)).T


def trainable_part(compiled: Compiled) -> Compiled:
    return Compiled(compiled.spec, tuple(op for op in compiled.ops if op.source != "data"), compiled.slot_input, compiled.slot_degree)


# ----------------------------------------------------------------------------
# spectral bound on the input derivative


def generator_eigenvalues(spec: CircuitSpec) -> np.ndarray:
    """Eigenvalues of the per-upload data generator for a broadcast scalar input.

    Product map: sum of Y/2 on every qubit. Chebyshev map: sum of k*Y on qubit
    k, expressed in the angle variable t = arccos(x).
    """
    if spec.feature_map == "amplitude" or not spec.broadcast:
        raise CircuitError("spectral bound needs a broadcast rotation feature map")
    if spec.feature_map == "product":
        scales = np.full(spec.n_qubits, 0.5)
    else:
        scales = np.arange(1, spec.n_qubits + 1, dtype=float)
    vals = np.zeros(1)
    for s in scales:
        vals = (vals[:, None] + np.array([-s, s])[None, :]).ravel()
    return vals


def lipschitz_bound(spec: CircuitSpec, cap: int = 12) -> float:
    """Upper bound on |df/dx| from the distinct accessible frequency sums.

    The bound is ``N_q * sum_{j,k} |Lambda_j - Lambda_k|`` over distinct sums
    Lambda of one generator eigenvalue per upload. For the Chebyshev map the
    derivative is with respect to t = arccos(x).
    """
    if spec.n_qubits * spec.reuploads > cap:
        raise CircuitError(f"n_qubits * reuploads exceeds the enumeration cap {cap}")
    sums = frequency_sums(spec)
    total = np.abs(sums[:, None] - sums[None, :]).sum()
    return float(spec.n_qubits * total)


def frequency_sums(spec: CircuitSpec) -> np.ndarray:
    eig = np.unique(np.round(generator_eigenvalues(spec), 12))
    sums = np.zeros(1)
    for _ in range(spec.reuploads):
        sums = np.unique(np.round((sums[:, None] + eig[None, :]).ravel(), 12))
    return sums
