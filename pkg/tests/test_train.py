import csv
from importlib import resources

import numpy as np
import pytest

from qxc.errors import ConfigError
from qxc.functionals import XcModelSpec, build_model
from qxc.oracle import load_dataset
from qxc.scf import ScfConfig, run_scf
from qxc.train import (
    LOG_COLUMNS,
    AdamState,
    LossWeights,
    Objective,
    TrainConfig,
    adam_step,
    evaluate_profile,
    fit,
    learning_rate,
    loss,
    molecule_loss,
    npe,
    summarize,
)


@pytest.fixture(scope="module")
def coarse():
    return load_dataset(resources.files("qxc") / "data" / "h2_coarse.dat")


def test_learning_rate_schedule():
    assert learning_rate(0, 100) == 1e-2
    assert learning_rate(59, 100) == 1e-2
    assert learning_rate(99, 100) == pytest.approx(1e-4)
    rates = [learning_rate(e, 100) for e in range(100)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert learning_rate(0, 1) == 1e-2


def test_loss_weights_window():
    eta = LossWeights(decay=0.5, offset=3).eta(5)
    np.testing.assert_allclose(eta, [0, 0, 0.25, 0.5, 1.0])
    assert not np.any(LossWeights(offset=20).eta(15))


def test_train_config_validation():
    bad_configs = (
        dict(epochs=-1),
        dict(lr_start=1e-4, lr_end=1e-2),
        dict(hold_fraction=2.0),
        dict(optimizer="sgd"),
        dict(polish_epochs=-1),
        dict(optimizer="lbfgs", polish_epochs=5),
    )
    for bad in bad_configs:
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_adam_matches_textbook_update():
    theta = np.array([1.0, -2.0])
    state = AdamState.zeros(2)
    g1 = np.array([0.5, -1.0])
    out = adam_step(theta, g1, state, 0.1)
    # first bias-corrected step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(out, theta - 0.1 * np.sign(g1), rtol=1e-7)
    g2 = np.array([0.1, 0.3])
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1**2 + 0.001 * g2**2
    expected = out - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(adam_step(out, g2, state, 0.1), expected, rtol=1e-12)
    with pytest.raises(ConfigError):
        adam_step(theta, np.zeros(3), state, 0.1)


def test_adam_minimizes_quadratic():
    theta = np.array([3.0, -4.0])
    state = AdamState.zeros(2)
    for _ in range(2000):
        theta = adam_step(theta, 2 * theta, state, 0.05)
    assert np.linalg.norm(theta) < 1e-3


def test_molecule_loss_by_hand(coarse):
    ref = coarse.records[1]
    cfg = ScfConfig(n_iterations=4)
    traj = run_scf(ref.spec, None, None, cfg, coarse.grid, coarse.kernel)
    weights = LossWeights(decay=0.5, offset=3)
    density_term, energy_term = molecule_loss(traj, ref, weights)
    dn = traj.final_density - ref.density
    assert density_term == pytest.approx(np.sum(coarse.grid.weights * dn**2) / 2)
    de = traj.energies - ref.energy
    assert energy_term == pytest.approx((0.5 * de[2] ** 2 + de[3] ** 2) / 2)
    assert loss([traj], [ref], coarse.grid, weights) == pytest.approx(density_term + energy_term)


def test_loss_shape_checks(coarse):
    with pytest.raises(ConfigError):
        loss([], [], coarse.grid)


def test_objective_gradient_matches_finite_differences(coarse, rng):
    model = build_model(XcModelSpec(architecture="lmlp", n_grid=coarse.grid.n_points, hidden=[3]))
    theta = model.init(seed=4)
    obj = Objective(model, coarse.records[:2], coarse.grid, coarse.kernel, ScfConfig(n_iterations=6), LossWeights(offset=3))
    _, grad = obj.value_and_grad(theta)
    step = 1e-6
    for k in rng.choice(model.n_params, 5, replace=False):
        e = np.zeros_like(theta)
        e[k] = step
        fd = (obj.value(theta + e) - obj.value(theta - e)) / (2 * step)
        assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_lda_fit_reduces_training_loss(coarse, tmp_path):
    model = build_model(XcModelSpec(architecture="lda_poly", n_grid=coarse.grid.n_points))
    scf = ScfConfig(n_iterations=12)
    cfg = TrainConfig(epochs=30, optimizer="lbfgs", loss_offset=8)
    result = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, cfg)
    first = result.log[0]["train_loss"]
    assert result.status == "ok"
    assert result.best_val_loss <= first / 10
    path = tmp_path / "log.csv"
    result.write_log(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert len(rows) == len(result.log)


def test_adam_fit_tracks_best_validation(coarse):
    model = build_model(XcModelSpec(architecture="lda_poly", n_grid=coarse.grid.n_points))
    scf = ScfConfig(n_iterations=10)
    cfg = TrainConfig(epochs=5, lr_start=0.05, lr_end=0.01, loss_offset=8, train_indices=[0, 1], val_indices=[2])
    seen = []
    result = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, cfg, progress=seen.append)
    assert [r["epoch"] for r in result.log] == list(range(6))
    assert seen == result.log
    vals = [r["val_loss"] for r in result.log]
    assert result.best_val_loss == min(vals)
    assert result.best_epoch == int(np.argmin(vals))
    np.testing.assert_array_equal(result.theta_init, model.init(0))


def test_polish_continues_from_best_adam_parameters(coarse):
    model = build_model(XcModelSpec(architecture="lda_poly", n_grid=coarse.grid.n_points))
    scf = ScfConfig(n_iterations=10)
    base = dict(epochs=3, lr_start=0.05, lr_end=0.01, loss_offset=8, train_indices=[0, 1], val_indices=[2])
    adam = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, TrainConfig(**base))
    polished = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, TrainConfig(**base, polish_epochs=4))
    same = [{k: v for k, v in r.items() if k != "wall_time_s"} for r in polished.log[: len(adam.log)]]
    assert same == [{k: v for k, v in r.items() if k != "wall_time_s"} for r in adam.log]
    assert len(adam.log) < len(polished.log) <= len(adam.log) + 4
    assert [r["epoch"] for r in polished.log] == list(range(len(polished.log)))
    assert polished.best_val_loss <= adam.best_val_loss


def test_fit_is_deterministic(coarse):
    model = build_model(XcModelSpec(architecture="lmlp", n_grid=coarse.grid.n_points, hidden=[2]))
    scf = ScfConfig(n_iterations=10)
    cfg = TrainConfig(epochs=2, loss_offset=8, train_indices=[1], seed=5)
    a = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, cfg)
    b = fit(model, coarse.records, coarse.grid, coarse.kernel, scf, cfg)
    assert a.theta_final.tobytes() == b.theta_final.tobytes()
    assert [r["train_loss"] for r in a.log] == [r["train_loss"] for r in b.log]


@pytest.mark.parametrize(
    "scf, cfg",
    [
        (ScfConfig(n_iterations=12, mode="inference"), TrainConfig(loss_offset=8)),
        (ScfConfig(n_iterations=5), TrainConfig(loss_offset=8)),
        (ScfConfig(n_iterations=12), TrainConfig(loss_offset=8, train_indices=[])),
        (ScfConfig(n_iterations=12), TrainConfig(loss_offset=8, train_indices=[9])),
    ],
)
def test_fit_rejects_bad_setups(coarse, scf, cfg):
    model = build_model(XcModelSpec(architecture="lda_poly", n_grid=coarse.grid.n_points))
    with pytest.raises(ConfigError):
        fit(model, coarse.records, coarse.grid, coarse.kernel, scf, cfg)


def test_metrics():
    assert npe([0.1, -0.2, 0.05]) == pytest.approx(0.3)
    m = summarize(np.array([0.1, -0.3]), np.array([1e-3, 3e-3]), n_failed=1)
    assert m.avg_abs_de == pytest.approx(0.2)
    assert m.npe == pytest.approx(0.4)
    assert m.avg_mse_density == pytest.approx(2e-3)
    assert (m.n_points, m.n_failed) == (2, 1)
    assert np.isnan(summarize(np.array([]), np.array([])).avg_abs_de)


def test_profile_flags_failures(coarse, tmp_path):
    records = list(coarse.records[:2])
    scf = ScfConfig(n_iterations=300, density_tol=1e-8, mode="inference")
    model = build_model(XcModelSpec(architecture="lda_poly", n_grid=coarse.grid.n_points))
    profile = evaluate_profile(model, np.array([np.nan, 0.3]), records[:1], coarse.grid, coarse.kernel, scf)
    assert profile.rows[0]["converged"] is False
    assert profile.metrics.n_failed == 1
    good = evaluate_profile(None, None, records, coarse.grid, coarse.kernel, scf)
    assert [r["converged"] for r in good.rows] == [True, True]
    assert good.metrics.n_points == 2
    good.write(tmp_path / "p.csv", tmp_path / "p.json")
    assert (tmp_path / "p.csv").read_text().startswith("label,R,E_model,E_ref,dE,mse_n,converged,iterations")
