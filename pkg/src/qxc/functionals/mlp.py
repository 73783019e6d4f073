"""Dense networks with first- and second-order reverse passes.

Every block in the model zoo exposes the same contract: for a batch of inputs
``X`` of shape (B, L) it returns outputs ``Y`` (B, m) and the per-sample input
Jacobian ``J`` (B, m, L); its backward pass returns the input gradient of

    sum_b  ybar_b . Y_b  +  c_b . (J_b @ U_b)

for cotangents ``ybar``, ``c`` (B, m) and directions ``U`` (B, L), adding the
matching parameter gradient into a sink. The second term is what is needed
to differentiate through a potential defined as an input gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import QxcError


def _act(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if name == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if name == "softplus":
        s = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free
        return np.logaddexp(0.0, z), s, s * (1.0 - s)
    raise QxcError(f"unsupported activation {name!r}")


@dataclass(frozen=True)
class MLPBlock:
    widths: tuple[int, ...]
    activation: str = "tanh"
    activate_output: bool = False

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise QxcError(f"invalid layer widths {self.widths}")
        _act(self.activation, np.zeros(1))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def layout(self, prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            out += [(f"{prefix}.W{k}", (b, a)), (f"{prefix}.b{k}", (b,))]
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        chunks = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(a)
            chunks.append(rng.uniform(-bound, bound, size=b * a))
            chunks.append(rng.uniform(-bound, bound, size=b))
        return np.concatenate(chunks)

    def _unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            w = theta[pos : pos + a * b].reshape(b, a)
            pos += a * b
            out.append((w, theta[pos : pos + b]))
            pos += b
        return out

    def _activated(self, k: int) -> bool:
        return k < len(self.widths) - 2 or self.activate_output

    def forward(self, theta: np.ndarray, x: np.ndarray):
        layers = self._unpack(theta)
        a = x
        tang = np.broadcast_to(np.eye(self.n_in), (x.shape[0], self.n_in, self.n_in))
        cache = []
        for k, (w, b) in enumerate(layers):
            z = a @ w.T + b
            zt = tang @ w.T  # (B, L, width): tangents along each input direction
            if self._activated(k):
                s, d1, d2 = _act(self.activation, z)
                cache.append((a, z, d1, d2))
                a, tang = s, zt * d1[:, None, :]
            else:
                cache.append((a, z, None, None))
                a, tang = z, zt
        jac = np.swapaxes(tang, 1, 2)  # (B, m, L)
        return a, jac, (layers, cache)

    def backward(self, theta, state, ybar, direction, c, sink, offset: int) -> np.ndarray:
        layers, cache = state
        # tangent activations along ``direction`` for each layer input
        tang_in = []
        t = direction
        for k, (w, _) in enumerate(layers):
            tang_in.append(t)
            t = t @ w.T
            if self._activated(k):
                t = t * cache[k][2]
        abar = np.asarray(ybar, dtype=float)
        tbar = np.asarray(c, dtype=float)
        grads = []
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            a_in, z, d1, d2 = cache[k]
            if d1 is not None:
                zt = tang_in[k] @ w.T
                zbar = d1 * abar + d2 * zt * tbar
                ztbar = d1 * tbar
            else:
                zbar, ztbar = abar, tbar
            grads.append((zbar.T @ a_in + ztbar.T @ tang_in[k], zbar.sum(axis=0)))
            abar = zbar @ w
            tbar = ztbar @ w
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])
        sink.add(offset, flat)
        return abar


@dataclass(frozen=True)
class PowerLawBlock:
    """Scalar block ``y = -c1 * x**c2`` used by the two-parameter LDA."""

    n_in: int = 1
    n_out: int = 1
    n_params: int = 2

    def layout(self, prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        return [(f"{prefix}.c1", (1,)), (f"{prefix}.c2", (1,))]

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([1.0, 0.5])

    @staticmethod
    def _powers(x: np.ndarray, c2: float):
        pos = x > 0
        safe = np.where(pos, x, 1.0)
        p0 = np.where(pos, safe**c2, 0.0)
        p1 = np.where(pos, safe ** (c2 - 1.0), 0.0)
        p2 = np.where(pos, safe ** (c2 - 2.0), 0.0)
        log = np.where(pos, np.log(safe), 0.0)
        return p0, p1, p2, log

    def forward(self, theta, x):
        c1, c2 = theta
        p0, p1, _, _ = self._powers(x, c2)
        y = -c1 * p0
        jac = (-c1 * c2 * p1)[:, :, None]
        return y, jac, x

    def backward(self, theta, state, ybar, direction, c, sink, offset: int) -> np.ndarray:
        c1, c2 = theta
        x = state
        p0, p1, p2, log = self._powers(x, c2)
        cu = c * direction
        g_c1 = np.sum(ybar * -p0) + np.sum(cu * (-c2 * p1))
        g_c2 = np.sum(ybar * (-c1 * p0 * log)) + np.sum(cu * (-c1 * p1 * (1.0 + c2 * log)))
        sink.add(offset, np.array([g_c1, g_c2]))
        return ybar * (-c1 * c2 * p1) + cu * (-c1 * c2 * (c2 - 1.0) * p2)
