"""XC model zoo behind one contract: energy, potential, and exact adjoints.

A model maps a density sampled on the grid to an XC energy and its discrete
functional derivative ``v_i = (1/w_i) dE/dn_i``. Local models evaluate a
per-point energy density ``eps(n_i)`` and integrate ``sum_i w_i n_i eps_i``;
global models are chains of block layers ending in one scalar.

Optional Gaussian noise is added to the energy output only; it leaves the
potential and the per-point energy density untouched.

``backward`` differentiates ``Ebar * E + sum_i vbar_i * v_i`` with respect to
the density and the parameters, which is what a self-consistent unroll needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .. import qsim
from ..errors import ConfigError, StaleCacheError
from ..system import Grid1D
from .circuits import AmplitudeBlock, CircuitBlock, GradSink
from .mlp import MLPBlock, PowerLawBlock

Architecture = Literal["lda_poly", "lmlp", "gmlp", "cmlp", "lqnn_pr", "lqnn_ch", "gqnn", "qinn", "qicnn"]
LOCAL_ARCHITECTURES = ("lda_poly", "lmlp", "lqnn_pr", "lqnn_ch")
CHEBYSHEV_MARGIN = 1e-6


class CircuitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_qubits: int
    depth: int
    reuploads: int = 1
    entangler: Literal["cnot", "rzz"] = "cnot"
    final_rotations: bool = False
    backend: Literal["auto", "observable", "adjoint", "psr"] = "auto"
    dephasing: float = 0.0
    damping: float = 0.0
    shots: int | None = None

    def readout(self) -> qsim.Readout:
        return qsim.Readout(qsim.NoiseModel(self.dephasing, self.damping), self.shots)


class XcModelSpec(BaseModel):
    """Declarative description of one XC model.

    ``hidden`` are the hidden widths of the main MLP (lmlp, gmlp, and the cmlp
    chunk network). ``head_hidden`` are hidden widths of the combining head
    of chunked models. ``cmlp_output = "hidden"`` makes the cmlp chunk network
    emit its activated last hidden layer instead of a scalar.
    """

    model_config = ConfigDict(extra="forbid")

    architecture: Architecture
    n_grid: int
    locality: int = 1
    hidden: list[int] = []
    head_hidden: list[int] = []
    activation: Literal["tanh", "softplus"] = "tanh"
    cmlp_output: Literal["scalar", "hidden"] = "scalar"
    circuit: CircuitConfig | None = None
    n_layers: int = 1
    output_affine: bool = True
    chebyshev_scale: float = 1.0

    @property
    def embedding(self) -> str:
        return "local" if self.architecture in LOCAL_ARCHITECTURES else "global"

    @property
    def n_batches(self) -> int:
        return math.ceil(self.n_grid / self.locality)

    @model_validator(mode="after")
    def _check(self) -> "XcModelSpec":
        arch = self.architecture
        if self.n_grid < 1 or self.locality < 1:
            raise ConfigError("n_grid and locality must be positive")
        if self.embedding == "local" and self.locality != 1:
            raise ConfigError(f"{arch} is a 1-local model; locality must be 1")
        needs_circuit = arch in ("lqnn_pr", "lqnn_ch", "gqnn", "qinn", "qicnn")
        if needs_circuit and self.circuit is None:
            raise ConfigError(f"{arch} needs a circuit configuration")
        if arch in ("gqnn", "qicnn") and self.locality > self.circuit.n_qubits:
            raise ConfigError(f"locality {self.locality} exceeds {self.circuit.n_qubits} qubits")
        if arch == "qicnn" and self.n_layers < 2:
            raise ConfigError("qicnn needs at least two circuit layers")
        if arch == "cmlp" and self.cmlp_output == "hidden" and not self.hidden:
            raise ConfigError("cmlp hidden output needs at least one hidden layer")
        if self.chebyshev_scale <= 0:
            raise ConfigError("chebyshev_scale must be positive")
        return self


def preset(name: str, n_grid: int = 513) -> XcModelSpec:
    """Named reference configurations."""
    table: dict[str, dict] = {
        "lda_poly": dict(architecture="lda_poly"),
        "lmlp": dict(architecture="lmlp", hidden=[513]),
        "gmlp": dict(architecture="gmlp", hidden=[513]),
        "cmlp_2_2_1": dict(architecture="cmlp", locality=2, hidden=[2], cmlp_output="hidden"),
        "cmlp_19_19_1": dict(architecture="cmlp", locality=19, hidden=[19]),
        "cmlp_3_6_4": dict(architecture="cmlp", locality=3, hidden=[6, 6, 6, 6]),
        "lqnn_pr": dict(architecture="lqnn_pr", circuit=dict(n_qubits=4, depth=8, final_rotations=True)),
        "lqnn_ch": dict(architecture="lqnn_ch", circuit=dict(n_qubits=4, depth=8)),
        "gqnn": dict(architecture="gqnn", locality=3, circuit=dict(n_qubits=6, depth=8)),
        "qinn": dict(architecture="qinn", output_affine=False, circuit=dict(n_qubits=9, depth=10, final_rotations=True)),
        "qicnn": dict(architecture="qicnn", locality=3, n_layers=3, circuit=dict(n_qubits=6, depth=8)),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return XcModelSpec(n_grid=n_grid, **table[name])


PRESETS = ("lda_poly", "lmlp", "gmlp", "cmlp_2_2_1", "cmlp_19_19_1", "cmlp_3_6_4", "lqnn_pr", "lqnn_ch", "gqnn", "qinn", "qicnn")


# ----------------------------------------------------------------------------
# chain stages operating on one vector


class BlockLayer:
    """Applies one shared block to zero-padded chunks of the input vector."""

    def __init__(self, block, n_in: int):
        self.block = block
        self.n_in = n_in
        self.chunk = block.n_in
        self.n_chunks = math.ceil(n_in / self.chunk)
        self.n_out = self.n_chunks * block.n_out
        self.n_params = block.n_params

    def _chunks(self, x: np.ndarray) -> np.ndarray:
        padded = np.zeros(self.n_chunks * self.chunk)
        padded[: self.n_in] = x
        return padded.reshape(self.n_chunks, self.chunk)

    def forward(self, theta, x):
        y, jac, state = self.block.forward(theta, self._chunks(x))
        return y.ravel(), (jac, state)

    def jvp(self, state, xdot):
        return np.einsum("cml,cl->cm", state[0], self._chunks(xdot)).ravel()

    def vjp(self, state, ybar):
        out = np.einsum("cml,cm->cl", state[0], ybar.reshape(self.n_chunks, -1))
        return out.ravel()[: self.n_in]

    def backward(self, theta, state, ybar, xdot, c, sink, offset):
        m = self.block.n_out
        xbar = self.block.backward(
            theta, state[1], ybar.reshape(self.n_chunks, m), self._chunks(xdot), c.reshape(self.n_chunks, m), sink, offset
        )
        return xbar.ravel()[: self.n_in]


class Truncate:
    """Keeps the leading ``n_out`` entries of the input."""

    n_params = 0

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out

    def layout(self, prefix: str) -> list:
        return []

    def forward(self, theta, x):
        return x[: self.n_out].copy(), None

    def jvp(self, state, xdot):
        return xdot[: self.n_out].copy()

    def vjp(self, state, ybar):
        out = np.zeros(self.n_in)
        out[: self.n_out] = ybar
        return out

    def backward(self, theta, state, ybar, xdot, c, sink, offset):
        return self.vjp(state, ybar)


# ----------------------------------------------------------------------------


@dataclass
class XcEvaluation:
    energy: float
    potential: np.ndarray
    eps_xc: np.ndarray | None = None
    cache: object = field(default=None, repr=False)
    theta_key: bytes = field(default=b"", repr=False)


class XcModel:
    """Common parameter bookkeeping; subclasses define evaluate/backward."""

    spec: XcModelSpec
    parts: list[tuple[str, object, int]]  # (prefix, block-like, offset)

    @property
    def n_params(self) -> int:
        return sum(p[1].n_params for p in self.parts)

    @property
    def embedding(self) -> str:
        return self.spec.embedding

    def layout(self) -> list[dict]:
        out = []
        for prefix, part, offset in self.parts:
            block = getattr(part, "block", part)
            pos = offset
            for name, shape in block.layout(prefix):
                size = int(np.prod(shape))
                out.append({"name": name, "offset": pos, "shape": list(shape)})
                pos += size
        return out

    def init(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        chunks = [getattr(part, "block", part).init(rng) for _, part, _ in self.parts if part.n_params]
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def _check(self, theta: np.ndarray, density: np.ndarray, grid: Grid1D) -> None:
        if theta.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        if density.shape != (grid.n_points,) or grid.n_points != self.spec.n_grid:
            raise ConfigError(f"density of shape {density.shape} does not match a {self.spec.n_grid}-point model")

    @staticmethod
    def _fresh(theta: np.ndarray, evaluation: XcEvaluation) -> None:
        if evaluation.theta_key != theta.tobytes():
            raise StaleCacheError("evaluation was computed with different parameters")

    def gradient(self, theta, evaluation, e_bar, v_bar, grid) -> tuple[np.ndarray, np.ndarray]:
        """(dObjective/dtheta, dObjective/dn) for a single evaluation."""
        sink = GradSink(self.n_params)
        nbar = self.backward(theta, evaluation, e_bar, v_bar, grid, sink)
        return sink.resolve(theta), nbar


class LocalModel(XcModel):
    def __init__(self, spec: XcModelSpec, block):
        self.spec = spec
        self.block = block
        self.parts = [("eps", block, 0)]

    def evaluate(self, theta, density, grid, *, noise_std: float = 0.0, rng=None) -> XcEvaluation:
        theta = np.asarray(theta, dtype=float)
        self._check(theta, density, grid)
        y, jac, state = self.block.forward(theta, density[:, None])
        eps = y[:, 0]
        slope = jac[:, 0, 0]
        w = grid.weights
        energy = float(np.sum(w * eps * density))
        if noise_std > 0:
            energy += float(noise_std * rng.standard_normal())
        potential = eps + density * slope
        return XcEvaluation(energy, potential, eps, (density, slope, state), theta.tobytes())

    def backward(self, theta, evaluation, e_bar, v_bar, grid, sink, offset: int = 0) -> np.ndarray:
        self._fresh(theta, evaluation)
        density, slope, state = evaluation.cache
        w = grid.weights
        v_bar = np.zeros_like(density) if v_bar is None else v_bar
        ybar = (e_bar * w * density + v_bar)[:, None]
        c = (v_bar * density)[:, None]
        xbar = self.block.backward(theta, state, ybar, np.ones((density.size, 1)), c, sink, offset)[:, 0]
        return xbar + e_bar * w * evaluation.eps_xc + v_bar * slope


class ChainModel(XcModel):
    def __init__(self, spec: XcModelSpec, stages: list[tuple[str, object]]):
        self.spec = spec
        self.parts = []
        pos = 0
        for prefix, stage in stages:
            self.parts.append((prefix, stage, pos))
            pos += stage.n_params
        if self.parts[-1][1].n_out != 1:
            raise ConfigError("global model must end in a single output")

    def evaluate(self, theta, density, grid, *, noise_std: float = 0.0, rng=None) -> XcEvaluation:
        theta = np.asarray(theta, dtype=float)
        self._check(theta, density, grid)
        x = density
        states = []
        for _, stage, off in self.parts:
            x, st = stage.forward(theta[off : off + stage.n_params], x)
            states.append(st)
        energy = float(x[0])
        gbar = np.ones(1)
        for (_, stage, _), st in zip(reversed(self.parts), reversed(states)):
            gbar = stage.vjp(st, gbar)
        if noise_std > 0:
            energy += float(noise_std * rng.standard_normal())
        return XcEvaluation(energy, gbar / grid.weights, None, states, theta.tobytes())

    def backward(self, theta, evaluation, e_bar, v_bar, grid, sink, offset: int = 0) -> np.ndarray:
        self._fresh(theta, evaluation)
        states = evaluation.cache
        n_in = self.parts[0][1].n_in
        u = np.zeros(n_in) if v_bar is None else v_bar / grid.weights
        tangents = [u]
        for (_, stage, _), st in zip(self.parts, states):
            tangents.append(stage.jvp(st, tangents[-1]))
        xbar = np.array([float(e_bar)])
        tbar = np.ones(1)
        for k in range(len(self.parts) - 1, -1, -1):
            _, stage, off = self.parts[k]
            th = theta[off : off + stage.n_params]
            new_xbar = stage.backward(th, states[k], xbar, tangents[k], tbar, sink, offset + off)
            tbar = stage.vjp(states[k], tbar)
            xbar = new_xbar
        return xbar


# ----------------------------------------------------------------------------


def _circuit_spec(cfg: CircuitConfig, **kwargs) -> qsim.CircuitSpec:
    return qsim.CircuitSpec(cfg.n_qubits, cfg.depth, cfg.reuploads, entangler=cfg.entangler, final_rotations=cfg.final_rotations, **kwargs)


def build_model(spec: XcModelSpec, rng: np.random.Generator | None = None) -> XcModel:
    """Instantiate the model described by ``spec``.

    ``rng`` drives shot sampling in circuit readouts that use finite shots.
    """
    arch = spec.architecture
    cfg = spec.circuit
    if arch == "lda_poly":
        return LocalModel(spec, PowerLawBlock())
    if arch == "lmlp":
        return LocalModel(spec, MLPBlock((1, *spec.hidden, 1), spec.activation))
    if arch in ("lqnn_pr", "lqnn_ch"):
        fmap = "product" if arch == "lqnn_pr" else "chebyshev"
        scale, shift = 1.0, 0.0
        if fmap == "chebyshev":
            # map [0, chebyshev_scale] affinely into [-1 + margin, 1 - margin]
            scale = (2.0 - 2.0 * CHEBYSHEV_MARGIN) / spec.chebyshev_scale
            shift = -1.0 + CHEBYSHEV_MARGIN
        cspec = _circuit_spec(cfg, feature_map=fmap)
        block = CircuitBlock(cspec, cfg.backend, cfg.readout(), scale, shift, rng)
        return LocalModel(spec, block)
    if arch == "gmlp":
        return ChainModel(spec, [("mlp", BlockLayer(MLPBlock((spec.n_grid, *spec.hidden, 1), spec.activation), spec.n_grid))])
    if arch == "cmlp":
        widths = (spec.locality, *spec.hidden) if spec.cmlp_output == "hidden" else (spec.locality, *spec.hidden, 1)
        chunk = BlockLayer(MLPBlock(widths, spec.activation, activate_output=spec.cmlp_output == "hidden"), spec.n_grid)
        head = BlockLayer(MLPBlock((chunk.n_out, *spec.head_hidden, 1), spec.activation), chunk.n_out)
        return ChainModel(spec, [("chunk", chunk), ("head", head)])
    if arch in ("gqnn", "qicnn"):
        stages = []
        width = spec.n_grid
        for layer in range(spec.n_layers if arch == "qicnn" else 1):
            cspec = _circuit_spec(cfg, feature_map="product", n_inputs=spec.locality, broadcast=False)
            stage = BlockLayer(CircuitBlock(cspec, cfg.backend, cfg.readout(), rng=rng), width)
            stages.append((f"circuit{layer}", stage))
            width = stage.n_out
        if width > 1 or spec.head_hidden:
            stages.append(("head", BlockLayer(MLPBlock((width, *spec.head_hidden, 1), spec.activation), width)))
        return ChainModel(spec, stages)
    if arch == "qinn":
        dim = 1 << cfg.n_qubits
        width = min(spec.n_grid, dim)
        stages: list[tuple[str, object]] = []
        if width < spec.n_grid:
            stages.append(("truncate", Truncate(spec.n_grid, width)))
        cspec = _circuit_spec(cfg, feature_map="amplitude", n_inputs=width, broadcast=False)
        if not cfg.readout().exact:
            raise ConfigError("qinn supports exact readout only")
        stages.append(("circuit", BlockLayer(AmplitudeBlock(cspec), width)))
        if spec.output_affine:
            stages.append(("affine", BlockLayer(MLPBlock((1, 1)), 1)))
        return ChainModel(spec, stages)
    raise ConfigError(f"unknown architecture {arch!r}")


# ----------------------------------------------------------------------------
# functional-style entry points


def eval_exc(model: XcModel, theta, density, grid: Grid1D) -> XcEvaluation:
    return model.evaluate(np.asarray(theta, dtype=float), np.asarray(density, dtype=float), grid)


def eval_vxc(model: XcModel, theta, density, grid: Grid1D) -> np.ndarray:
    return eval_exc(model, theta, density, grid).potential


def param_gradient(model: XcModel, theta, evaluation: XcEvaluation, grid: Grid1D, e_bar: float = 0.0, v_bar=None) -> np.ndarray:
    """Gradient of ``e_bar * E_XC + vbar . v_XC`` with respect to the parameters."""
    return model.gradient(np.asarray(theta, dtype=float), evaluation, e_bar, v_bar, grid)[0]
