"""Quantum circuit blocks that satisfy the block contract of ``mlp``.

Three exact-or-estimated backends share one interface:

``observable``  circuits whose data all enters before the trainable gates.
                The ansatz is folded into one Hermitian matrix ``A`` so that
                ``f = psi(x)^T A psi(x)`` for the real encoded state, and all
                input derivatives are analytic. Parameter gradients reduce to
                ``d tr(A R) / d theta`` for an accumulated symmetric ``R``,
                resolved once per backward pass by an adjoint sweep.
``adjoint``     any noiseless circuit. Input derivatives by parameter shift
                on the data gates, parameter gradients by reverse sweeps.
``psr``         any readout, including gate noise and finite shots. Every
                derivative is a parameter-shift combination of estimated
                expectations, as it would be on hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import qsim
from ..errors import CircuitError
from ..qsim import HALF_PI, CircuitSpec, Readout


class GradSink:
    """Accumulates a flat parameter gradient, deferring circuit terms.

    Observable-backend blocks push symmetric matrices ``R``; they are summed
    per block and converted to angle gradients once in ``resolve``.
    """

    def __init__(self, n_params: int):
        self.grad = np.zeros(n_params)
        self._pending: dict[int, tuple[object, int, np.ndarray]] = {}

    def add(self, offset: int, values: np.ndarray) -> None:
        self.grad[offset : offset + values.size] += values

    def add_observable(self, block: "CircuitBlock", offset: int, matrix: np.ndarray) -> None:
        key = offset
        if key in self._pending:
            _, _, acc = self._pending[key]
            acc += matrix
        else:
            self._pending[key] = (block, offset, matrix.copy())

    def resolve(self, theta: np.ndarray) -> np.ndarray:
        for block, offset, matrix in self._pending.values():
            size = block.n_params
            self.add(offset, block.observable_gradient(theta[offset : offset + size], matrix))
        self._pending.clear()
        return self.grad


def _kron_rows(factors: list[np.ndarray]) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
    return out


@dataclass
class CircuitBlock:
    """Scalar circuit readout of a rotation-encoded input vector.

    ``input_scale``/``input_shift`` apply a fixed affine map to inputs before
    the feature map (used to place densities inside the Chebyshev domain).
    """

    spec: CircuitSpec
    backend: str = "auto"
    readout: Readout = field(default_factory=Readout)
    input_scale: float = 1.0
    input_shift: float = 0.0
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        if self.spec.feature_map == "amplitude":
            raise CircuitError("use AmplitudeBlock for amplitude encoding")
        if self.backend == "auto":
            if not self.readout.exact:
                self.backend = "psr"
            elif self.spec.data_first:
                self.backend = "observable"
            else:
                self.backend = "adjoint"
        if self.backend not in ("observable", "adjoint", "psr"):
            raise CircuitError(f"unknown circuit backend {self.backend!r}")
        if self.backend != "psr" and not self.readout.exact:
            raise CircuitError("noisy or sampled readout requires the psr backend")
        if self.backend == "observable" and not self.spec.data_first:
            raise CircuitError("observable backend needs a single-upload circuit")
        self.compiled = qsim.compile_circuit(self.spec)
        self._matrix_key: bytes | None = None
        self._matrix: np.ndarray | None = None

    n_out = 1

    @property
    def n_in(self) -> int:
        return self.spec.n_inputs

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def layout(self, prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        s = self.spec
        out = [(f"{prefix}.angles", (s.reuploads, s.depth, s.n_qubits, 3))]
        if s.final_rotations:
            out.append((f"{prefix}.final_angles", (s.n_qubits, 3)))
        if s.entangler == "rzz":
            out.append((f"{prefix}.zz_angles", (s.reuploads, s.depth, len(s.pairs))))
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-np.pi, np.pi, size=self.n_params)

    # -- shared helpers ---------------------------------------------------

    def _encode(self, x: np.ndarray):
        z = self.input_shift + self.input_scale * x
        phi, d1, d2 = qsim.encode(self.compiled, z)
        return phi, d1 * self.input_scale, d2 * self.input_scale**2

    def _fold(self, per_slot: np.ndarray) -> np.ndarray:
        return qsim.fold_slots(self.compiled, per_slot)

    def _init_states(self, batch: int) -> np.ndarray:
        init = np.zeros((batch, self.spec.dim))
        init[:, 0] = 1.0
        return init

    def forward(self, theta: np.ndarray, x: np.ndarray):
        phi, d1, d2 = self._encode(x)
        if self.backend == "observable":
            return self._forward_observable(theta, phi, d1, d2)
        init = self._init_states(x.shape[0])
        if self.backend == "adjoint":
            values, _, gslot = qsim.adjoint_gradient(self.compiled, theta, phi, init, np.ones(x.shape[0]))
        else:
            values = qsim.evaluate(self.compiled, theta, phi, init, self.readout, self.rng)
            gslot = qsim.slot_gradient(self.compiled, theta, phi, init, self.readout, self.rng)
        jac = self._fold(gslot * d1)[:, None, :]
        return values[:, None], jac, (phi, d1, d2, gslot)

    def backward(self, theta, state, ybar, direction, c, sink: GradSink, offset: int) -> np.ndarray:
        if self.backend == "observable":
            return self._backward_observable(theta, state, ybar, direction, c, sink, offset)
        phi, d1, d2, gslot = state
        ybar = ybar[:, 0]
        c = c[:, 0]
        udir = direction[:, self.compiled.slot_input]
        coef = c[:, None] * udir * d1  # weight on df/dphi_s in the objective
        if self.backend == "adjoint":
            g_theta, hess = self._shifted_adjoint(theta, phi, ybar, coef)
        else:
            g_theta, hess = self._shifted_psr(theta, phi, ybar, coef)
        sink.add(offset, g_theta)
        xbar_slot = (ybar[:, None] * gslot + hess) * d1 + c[:, None] * udir * d2 * gslot
        return self._fold(xbar_slot)

    @staticmethod
    def _shift_batch(phi, ybar, coef):
        """Rows and weights whose weighted sum of f equals ybar.f + coef.df/dphi."""
        b, s = phi.shape
        rows, weights = [phi], [ybar]
        for k in range(s):
            for sign in (1.0, -1.0):
                shifted = phi.copy()
                shifted[:, k] += sign * HALF_PI
                rows.append(shifted)
                weights.append(0.5 * sign * coef[:, k])
        return np.concatenate(rows), np.concatenate(weights)

    # -- adjoint backend ----------------------------------------------------

    def _shifted_adjoint(self, theta, phi, ybar, coef):
        b, s = phi.shape
        allphi, w = self._shift_batch(phi, ybar, coef)
        _, g_theta, g_slot = qsim.adjoint_gradient(self.compiled, theta, allphi, self._init_states(allphi.shape[0]), w)
        hess = g_slot[b:].reshape(2 * s, b, s).sum(axis=0)
        return g_theta, hess

    # -- parameter-shift backend --------------------------------------------

    def _eval(self, theta, phi):
        return qsim.evaluate(self.compiled, theta, phi, self._init_states(phi.shape[0]), self.readout, self.rng)

    def _shifted_psr(self, theta, phi, ybar, coef):
        b, s = phi.shape
        p = theta.size
        allphi, w = self._shift_batch(phi, ybar, coef)
        active = np.flatnonzero(w)
        allphi, w = allphi[active], w[active]
        g_theta = np.zeros(p)
        if active.size:
            nrow = allphi.shape[0]
            thetas = np.repeat(theta[None, :], 2 * p * nrow, axis=0).reshape(2 * p, nrow, p)
            for j in range(p):
                thetas[2 * j, :, j] += HALF_PI
                thetas[2 * j + 1, :, j] -= HALF_PI
            vals = qsim.evaluate(
                self.compiled, thetas.reshape(-1, p), np.tile(allphi, (2 * p, 1)), self._init_states(2 * p * nrow), self.readout, self.rng
            ).reshape(2 * p, nrow)
            g_theta = 0.5 * (vals[0::2] - vals[1::2]) @ w
        # data Hessian by double shifts: H_st = [f(++) - f(+-) - f(-+) + f(--)] / 4
        hess = np.zeros((b, s))
        if np.any(coef):
            combos = []
            for t in range(s):
                for k in range(s):
                    for st, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        shifted = phi.copy()
                        shifted[:, t] += st * HALF_PI
                        shifted[:, k] += sk * HALF_PI
                        combos.append(shifted)
            vals = self._eval(theta, np.concatenate(combos)).reshape(s, s, 4, b)
            h = 0.25 * (vals[:, :, 0] - vals[:, :, 1] - vals[:, :, 2] + vals[:, :, 3])  # (t, k, b)
            hess = np.einsum("tkb,bk->bt", h, coef)
        return g_theta, hess

    # -- observable backend ------------------------------------------------

    def matrix(self, theta: np.ndarray) -> np.ndarray:
        key = theta.tobytes()
        if key != self._matrix_key:
            u = qsim.ansatz_unitary(self.compiled, theta)
            diag = qsim.magnetization_diagonal(self.spec.n_qubits)
            self._matrix = np.real(np.conj(u.T) @ (diag[:, None] * u))
            self._matrix = 0.5 * (self._matrix + self._matrix.T)
            self._matrix_key = key
        return self._matrix

    def _product_terms(self, phi: np.ndarray):
        """State, first and second derivatives w.r.t. each slot angle."""
        n = self.spec.n_qubits
        b, s = phi.shape
        slot_qubit = {int(q): k for k, q in enumerate(self._slot_qubits())}
        half = 0.5 * phi
        base, first = [], []
        for q in range(n):
            if q in slot_qubit:
                a = half[:, slot_qubit[q]]
                base.append(np.stack([np.cos(a), np.sin(a)], axis=1))
                first.append(np.stack([-0.5 * np.sin(a), 0.5 * np.cos(a)], axis=1))
            else:
                base.append(np.tile([1.0, 0.0], (b, 1)))
                first.append(None)
        psi = _kron_rows(base)
        qubits = self._slot_qubits()
        dpsi = np.empty((b, s, psi.shape[1]))
        for k, q in enumerate(qubits):
            f = list(base)
            f[q] = first[q]
            dpsi[:, k] = _kron_rows(f)
        ddpsi = np.empty((b, s, s, psi.shape[1]))
        for k, q in enumerate(qubits):
            ddpsi[:, k, k] = -0.25 * psi
            for t in range(k + 1, s):
                f = list(base)
                f[q] = first[q]
                f[qubits[t]] = first[qubits[t]]
                ddpsi[:, k, t] = ddpsi[:, t, k] = _kron_rows(f)
        return psi, dpsi, ddpsi

    def _slot_qubits(self) -> list[int]:
        ops = [op for op in self.compiled.ops if op.source == "data"]
        return [op.qubits[0] for op in sorted(ops, key=lambda o: o.index)]

    def _forward_observable(self, theta, phi, d1, d2):
        a = self.matrix(theta)
        psi, dpsi, ddpsi = self._product_terms(phi)
        apsi = psi @ a
        values = np.einsum("bd,bd->b", apsi, psi)
        gslot = 2.0 * np.einsum("bd,bsd->bs", apsi, dpsi)
        jac = self._fold(gslot * d1)[:, None, :]
        return values[:, None], jac, (phi, d1, d2, gslot, psi, dpsi, ddpsi)

    def _backward_observable(self, theta, state, ybar, direction, c, sink, offset):
        phi, d1, d2, gslot, psi, dpsi, ddpsi = state
        a = self.matrix(theta)
        ybar = ybar[:, 0]
        c = c[:, 0]
        udir = direction[:, self.compiled.slot_input]
        coef = c[:, None] * udir * d1  # (B, S)
        q = np.einsum("bs,bsd->bd", coef, dpsi)
        dq = np.einsum("bs,bstd->btd", coef, ddpsi)
        # d/dphi_t of [ybar f + sum_s coef_s df/dphi_s]
        gq = 2.0 * (np.einsum("bd,btd->bt", q @ a, dpsi) + np.einsum("bd,btd->bt", psi @ a, dq))
        xbar_slot = (ybar[:, None] * gslot + gq) * d1 + c[:, None] * udir * d2 * gslot
        r = (psi * ybar[:, None]).T @ psi + psi.T @ q + q.T @ psi
        sink.add_observable(self, offset, r)
        return self._fold(xbar_slot)

    def observable_gradient(self, theta: np.ndarray, r: np.ndarray) -> np.ndarray:
        """d tr(A(theta) R)/d theta for symmetric R, by an adjoint sweep."""
        vals, vecs = np.linalg.eigh(0.5 * (r + r.T))
        keep = np.abs(vals) > 1e-15 * max(1.0, np.abs(vals).max())
        if not np.any(keep):
            return np.zeros(self.n_params)
        part = qsim.trainable_part(self.compiled)
        _, g, _ = qsim.adjoint_gradient(part, theta, None, vecs[:, keep].T, vals[keep])
        return g


@dataclass
class AmplitudeBlock:
    """Circuit reading out the amplitude-encoded, normalized input vector."""

    spec: CircuitSpec

    def __post_init__(self) -> None:
        if self.spec.feature_map != "amplitude":
            raise CircuitError("AmplitudeBlock needs the amplitude feature map")
        self.compiled = qsim.compile_circuit(self.spec)
        self._key: bytes | None = None
        self._a: np.ndarray | None = None

    n_out = 1

    @property
    def n_in(self) -> int:
        return self.spec.n_inputs

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def layout(self, prefix: str):
        return CircuitBlock.layout(self, prefix)  # type: ignore[arg-type]

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-np.pi, np.pi, size=self.n_params)

    def matrix(self, theta: np.ndarray) -> np.ndarray:
        key = theta.tobytes()
        if key != self._key:
            u = qsim.ansatz_unitary(self.compiled, theta)
            diag = qsim.magnetization_diagonal(self.spec.n_qubits)
            a = np.real(np.conj(u.T) @ (diag[:, None] * u))
            self._a = 0.5 * (a + a.T)
            self._key = key
        return self._a

    def forward(self, theta, x):
        b, length = x.shape
        norm = np.linalg.norm(x, axis=1)
        if np.any(norm == 0):
            raise CircuitError("cannot amplitude-encode an all-zero density")
        a = self.matrix(theta)[:length, :length]
        psi = x / norm[:, None]
        apsi = psi @ a
        values = np.einsum("bd,bd->b", apsi, psi)
        # df/dx = (2/r) (I - psi psi^T) A psi
        grad = 2.0 / norm[:, None] * (apsi - values[:, None] * psi)
        return values[:, None], grad[:, None, :], (psi, norm, apsi, values, grad)

    def backward(self, theta, state, ybar, direction, c, sink, offset):
        psi, norm, apsi, values, grad = state
        a = self.matrix(theta)[: psi.shape[1], : psi.shape[1]]
        ybar = ybar[:, 0]
        c = c[:, 0]
        u = direction
        r = norm[:, None]
        pu = u - np.einsum("bd,bd->b", psi, u)[:, None] * psi
        dpsi = pu / r
        # Hessian-vector product of f along u
        pa = apsi - values[:, None] * psi
        dpa = dpsi @ a - (np.einsum("bd,bd->b", dpsi, apsi) + np.einsum("bd,bd->b", psi, dpsi @ a))[:, None] * psi - values[:, None] * dpsi
        hu = -2.0 * np.einsum("bd,bd->b", psi, u)[:, None] / r**2 * pa + 2.0 / r * dpa
        xbar = ybar[:, None] * grad + c[:, None] * hu
        full = self.spec.dim
        pad_psi = np.zeros((psi.shape[0], full))
        pad_psi[:, : psi.shape[1]] = psi
        pad_d = np.zeros_like(pad_psi)
        pad_d[:, : psi.shape[1]] = dpsi
        rmat = (pad_psi * ybar[:, None]).T @ pad_psi + (pad_psi * c[:, None]).T @ pad_d + (pad_d * c[:, None]).T @ pad_psi
        sink.add_observable(self, offset, rmat)
        return xbar

    def observable_gradient(self, theta, r):
        return CircuitBlock.observable_gradient(self, theta, r)  # type: ignore[arg-type]
