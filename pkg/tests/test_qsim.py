"""Circuit simulator checks against a dense Kronecker-product reference."""

import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qxc import qsim
from qxc.errors import CircuitError
from qxc.qsim import CircuitSpec, NoiseModel, Readout

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)
PAULI = {"X": X, "Y": Y, "Z": Z}


def rot(axis, angle):
    return math.cos(angle / 2) * I2 - 1j * math.sin(angle / 2) * PAULI[axis]


def on_qubit(gate, q, n):
    # qubit 0 is the most significant bit
    return reduce(np.kron, [gate if k == q else I2 for k in range(n)])


def cnot(control, target, n):
    dim = 1 << n
    mat = np.zeros((dim, dim))
    for i in range(dim):
        bits = [(i >> (n - 1 - k)) & 1 for k in range(n)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (n - 1 - k) for k, b in enumerate(bits))
        mat[j, i] = 1
    return mat


def reference_state(spec, theta, x):
    """Independent dense simulation of the hardware-efficient layout."""
    n = spec.n_qubits
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def zxz(base):
        nonlocal psi
        for q in range(n):
            t = theta[base + 3 * q : base + 3 * q + 3]
            u = rot("Z", t[0]) @ rot("X", t[1]) @ rot("Z", t[2])
            psi = on_qubit(u, q, n) @ psi

    for layer in range(spec.reuploads):
        for q in range(n if spec.broadcast else spec.n_inputs):
            value = x[0] if spec.broadcast else x[q]
            angle = value if spec.feature_map == "product" else 2 * (q + 1) * math.acos(value)
            psi = on_qubit(rot("Y", angle), q, n) @ psi
        for d in range(spec.depth):
            zxz(((layer * spec.depth + d) * n) * 3)
            for a, b in spec.pairs:
                psi = cnot(a, b, n) @ psi
    if spec.final_rotations:
        zxz(3 * n * spec.reuploads * spec.depth)
    return psi


def total_z(n):
    return sum(on_qubit(Z, q, n) for q in range(n))


random_specs = st.builds(
    CircuitSpec,
    n_qubits=st.integers(1, 4),
    depth=st.integers(0, 3),
    reuploads=st.integers(1, 2),
    feature_map=st.sampled_from(["product", "chebyshev"]),
    final_rotations=st.booleans(),
)


@settings(max_examples=40, deadline=None)
@given(random_specs, st.integers(0, 2**31 - 1), st.floats(-0.95, 0.95))
def test_statevector_matches_dense_reference(spec, seed, x):
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, spec.n_params)
    ours = qsim.run_statevector(spec, theta, [x])
    ref = reference_state(spec, theta, x)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(random_specs, st.integers(0, 2**31 - 1), st.floats(-0.95, 0.95))
def test_norm_preserved_and_magnetization_bounded(spec, seed, x):
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, spec.n_params)
    psi = qsim.run_statevector(spec, theta, [x])
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    m = qsim.expectation_magnetization(psi)
    assert abs(m) <= spec.n_qubits + 1e-12
    assert m == pytest.approx(np.real(np.conj(psi) @ total_z(spec.n_qubits) @ psi), abs=1e-12)


def test_identity_circuit_gives_full_magnetization():
    spec = CircuitSpec(4, 2)
    psi = qsim.run_statevector(spec, np.zeros(spec.n_params), [0.0])
    assert qsim.expectation_magnetization(psi) == pytest.approx(4.0)


def test_product_map_pi_flips_every_qubit():
    spec = CircuitSpec(3, 0)
    psi = qsim.run_statevector(spec, np.zeros(0), [math.pi])
    assert qsim.expectation_magnetization(psi) == pytest.approx(-3.0)


def test_chebyshev_map_at_one_is_identity():
    spec = CircuitSpec(3, 0, feature_map="chebyshev")
    psi = qsim.run_statevector(spec, np.zeros(0), [1.0])
    assert abs(psi[0]) == pytest.approx(1.0)


def test_amplitude_encoding_normalizes():
    spec = CircuitSpec(2, 0, feature_map="amplitude", n_inputs=3, broadcast=False)
    psi = qsim.run_statevector(spec, np.zeros(0), [3.0, 0.0, 4.0])
    np.testing.assert_allclose(psi, [0.6, 0.0, 0.8, 0.0], atol=1e-15)
    with pytest.raises(CircuitError):
        qsim.run_statevector(spec, np.zeros(0), [0.0, 0.0, 0.0])


def test_parameter_counts():
    assert CircuitSpec(4, 8).n_params == 96
    assert CircuitSpec(6, 8).n_params == 144
    assert CircuitSpec(9, 10, feature_map="amplitude", n_inputs=512, broadcast=False, final_rotations=True).n_params == 297
    assert CircuitSpec(3, 2, entangler="rzz").n_params == 3 * 3 * 2 + 2 * 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_qubits=0, depth=1),
        dict(n_qubits=2, depth=1, feature_map="fourier"),
        dict(n_qubits=2, depth=1, entangler="cz"),
        dict(n_qubits=2, depth=1, n_inputs=2),
        dict(n_qubits=2, depth=1, n_inputs=3, broadcast=False),
        dict(n_qubits=2, depth=1, feature_map="amplitude", n_inputs=5, broadcast=False),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(CircuitError):
        CircuitSpec(**kwargs)


def test_chebyshev_domain_checked():
    spec = CircuitSpec(2, 1, feature_map="chebyshev")
    with pytest.raises(CircuitError):
        qsim.run_statevector(spec, np.zeros(spec.n_params), [1.5])


def _fd_theta(spec, theta, x, k, step=1e-6):
    e = np.zeros_like(theta)
    e[k] = step
    f = lambda t: qsim.expectation_magnetization(qsim.run_statevector(spec, t, [x]))  # noqa: E731
    return (f(theta + e) - f(theta - e)) / (2 * step)


@settings(max_examples=20, deadline=None)
@given(random_specs, st.integers(0, 2**31 - 1), st.floats(-0.9, 0.9))
def test_parameter_shift_matches_finite_differences(spec, seed, x):
    if spec.n_params == 0:
        return
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, spec.n_params)
    psr = qsim.psr_gradient(spec, theta, [x])
    fd = np.array([_fd_theta(spec, theta, x, k) for k in range(spec.n_params)])
    np.testing.assert_allclose(psr, fd, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(random_specs, st.integers(0, 2**31 - 1))
def test_adjoint_agrees_with_parameter_shift(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    x = rng.uniform(-0.9, 0.9, (3, 1))
    compiled = qsim.compile_circuit(spec)
    angles, _, _ = qsim.encode(compiled, x)
    init = np.zeros((3, spec.dim))
    init[:, 0] = 1
    weights = rng.standard_normal(3)
    values, g_theta, g_slot = qsim.adjoint_gradient(compiled, theta, angles, init, weights)
    np.testing.assert_allclose(values, qsim.evaluate(compiled, theta, angles, init), atol=1e-12)
    if spec.n_params:
        psr = qsim.psr_gradient(spec, theta, x)
        np.testing.assert_allclose(g_theta, weights @ psr, atol=1e-10)
    slots = qsim.slot_gradient(compiled, theta, angles, init)
    np.testing.assert_allclose(g_slot, weights[:, None] * slots, atol=1e-10)


def test_input_gradient_matches_finite_differences(rng):
    for fmap in ("product", "chebyshev"):
        spec = CircuitSpec(3, 2, reuploads=2, feature_map=fmap)
        theta = rng.uniform(-np.pi, np.pi, spec.n_params)
        x = 0.3
        f = lambda v: qsim.expectation_magnetization(qsim.run_statevector(spec, theta, [v]))  # noqa: E731
        fd = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6
        assert qsim.input_gradient(spec, theta, [x])[0] == pytest.approx(fd, abs=1e-7)


def test_psr_rejects_bad_index():
    spec = CircuitSpec(2, 1)
    with pytest.raises(CircuitError):
        qsim.psr_gradient(spec, np.zeros(spec.n_params), [0.1], which=[99])


# -- density matrices and noise --------------------------------------------


def test_density_matrix_matches_statevector_without_noise(rng):
    spec = CircuitSpec(3, 3, reuploads=2)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    psi = qsim.run_statevector(spec, theta, [0.4])
    rho = qsim.run_density_matrix(spec, theta, [0.4])
    np.testing.assert_allclose(rho.matrix, np.outer(psi, psi.conj()), atol=1e-12)


def _plus_state():
    return np.full((2, 2), 0.5, dtype=complex)


def test_full_dephasing_kills_coherence():
    rho = qsim.apply_channel(_plus_state(), 0, 1, NoiseModel(dephasing=1.0))
    assert np.real(np.trace(rho @ X)) == pytest.approx(0.0, abs=1e-15)
    assert np.trace(rho) == pytest.approx(1.0)


def test_partial_dephasing_scales_coherence():
    rho = qsim.apply_channel(_plus_state(), 0, 1, NoiseModel(dephasing=0.3))
    assert np.real(np.trace(rho @ X)) == pytest.approx(0.7)


def test_full_damping_relaxes_to_ground():
    one = np.diag([0.0, 1.0]).astype(complex)
    rho = qsim.apply_channel(one, 0, 1, NoiseModel(damping=1.0))
    np.testing.assert_allclose(rho, np.diag([1.0, 0.0]), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_channels_are_trace_preserving_and_positive(p_deph, p_damp, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    noise = NoiseModel(dephasing=p_deph, damping=p_damp)
    for kraus in noise.kraus():
        total = sum(k.conj().T @ k for k in kraus)
        np.testing.assert_allclose(total, I2, atol=1e-12)
    out = qsim.apply_channel(rho, 1, 2, noise)
    assert np.trace(out) == pytest.approx(1.0, abs=1e-12)
    assert np.min(np.linalg.eigvalsh(0.5 * (out + out.conj().T))) > -1e-12


def test_noise_probability_validated():
    with pytest.raises(CircuitError):
        NoiseModel(dephasing=1.5)


def test_noisy_readout_shrinks_magnetization(rng):
    spec = CircuitSpec(2, 2)
    theta = np.zeros(spec.n_params)
    clean = qsim.expectation_magnetization(qsim.run_density_matrix(spec, theta, [0.0]))
    noisy = qsim.expectation_magnetization(qsim.run_density_matrix(spec, theta, [0.0], NoiseModel(damping=0.0, dephasing=0.2)))
    assert clean == pytest.approx(2.0)
    # dephasing commutes with Z on |00>, so the magnetization survives
    assert noisy == pytest.approx(2.0)
    flipped = qsim.run_density_matrix(spec, theta, [math.pi], NoiseModel(damping=0.1))
    assert qsim.expectation_magnetization(flipped) > -2.0


# -- shots -------------------------------------------------------------------


def test_sampling_is_unbiased_and_error_shrinks(rng):
    spec = CircuitSpec(2, 1)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    psi = qsim.run_statevector(spec, theta, [0.7])
    exact = qsim.expectation_magnetization(psi)
    probs = np.tile(qsim.probabilities(psi), (2000, 1))
    means, errs = qsim.sample_magnetization(probs, 400, rng)
    assert np.mean(means) == pytest.approx(exact, abs=0.02)
    assert np.std(means) == pytest.approx(np.mean(errs), rel=0.1)


def test_sampling_needs_positive_shots(rng):
    with pytest.raises(CircuitError):
        qsim.sample_magnetization(np.array([1.0, 0.0]), 0, rng)


def test_shot_readout_requires_rng():
    spec = CircuitSpec(1, 1)
    compiled = qsim.compile_circuit(spec)
    with pytest.raises(CircuitError):
        qsim.evaluate(compiled, np.zeros(3), np.zeros((1, 1)), np.array([[1.0, 0.0]]), Readout(shots=10))


# -- spectral bound ----------------------------------------------------------


def test_lipschitz_bound_single_qubit():
    # eigenvalues +-1/2 -> sums {-1/2, 1/2}; bound 1 * (1 + 1) = 2
    assert qsim.lipschitz_bound(CircuitSpec(1, 1)) == pytest.approx(2.0)


def test_lipschitz_bound_enumeration_cap():
    with pytest.raises(CircuitError):
        qsim.lipschitz_bound(CircuitSpec(7, 1, reuploads=2))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(1, 3), st.integers(0, 1000))
def test_sampled_derivative_within_bound(n_qubits, depth, reuploads, seed):
    spec = CircuitSpec(n_qubits, depth, reuploads)
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, spec.n_params)
    x = np.linspace(-np.pi, np.pi, 181)[:, None]
    grad = qsim.input_gradient(spec, theta, x)
    assert np.max(np.abs(grad)) <= qsim.lipschitz_bound(spec) + 1e-12
