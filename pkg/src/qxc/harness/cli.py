"""Command line entry point: ``qxc <subcommand> [--config FILE|PRESET] [--set key=value ...]``.

Every subcommand writes a run directory (see ``rundir``). Failures print a
JSON error record ``{"code", "message", "field"}`` on stderr, store it in the
manifest when a run directory exists, and exit with status 2 for config
errors and 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
from pydantic import ValidationError

from .. import qsim
from ..errors import ConfigError, QxcError
from ..functionals import build_model, load_checkpoint, save_checkpoint
from ..oracle import generate_dataset, load_dataset, save_dataset
from ..scf import run_scf
from ..system import InteractionKernel, build_grid, make_system
from ..train import LOG_COLUMNS, PROFILE_COLUMNS, evaluate_profile, fit
from . import experiments
from .config import PRESETS, SCHEMAS, ModelChoice, build_config, resolve_path
from .rundir import RunDirectory, jsonable

log = logging.getLogger("qxc.cli")

NOISE_COLUMNS = ["sigma", "seed", "converged_loss", "avg_abs_dE", "mse_n", "npe", "status"]
SHOT_GATE_COLUMNS = ["p", "shots", "final_loss", "avg_abs_dE", "mse_n", "npe", "status"]
STABILITY_COLUMNS = ["epsilon", "e_inf", "e_energy", "kappa_est"]
SYNTHETIC_COLUMNS = ["kappa", "epsilon", "e_inf", "bound", "iterations"]
LIPSCHITZ_COLUMNS = ["feature_map", "n_qubits", "depth", "reuploads", "bound", "max_sampled", "ratio"]


def _grid(cfg):
    return build_grid(cfg.x_min, cfg.x_max, cfg.n_points)


def _kernel(cfg):
    return InteractionKernel(softening=cfg.softening, strength=cfg.strength)


def load_model(choice: ModelChoice, n_grid: int, seed: int):
    """(model, theta, spec) from a checkpoint or a freshly initialized spec."""
    if choice.checkpoint is not None:
        spec, theta, _ = load_checkpoint(resolve_path(choice.checkpoint))
        if spec.n_grid != n_grid:
            raise ConfigError(f"checkpoint model expects {spec.n_grid} grid points, data has {n_grid}")
    else:
        spec = choice.resolve(n_grid)
        theta = None
    model = build_model(spec, np.random.default_rng(seed))
    if theta is None:
        theta = model.init(seed)
    return model, theta, spec


def _dataset(path: str, occupation: str = "integer"):
    return load_dataset(resolve_path(path), occupation)


def _pick(records, indices):
    if indices is None:
        return list(records)
    for i in indices:
        if not 0 <= i < len(records):
            raise ConfigError(f"record index {i} out of range")
    return [records[i] for i in indices]


# ----------------------------------------------------------------------------
# subcommands


def cmd_dataset_gen(cfg, run: RunDirectory) -> dict:
    grid = _grid(cfg.grid)
    specs = [make_system(s.label, r) for s in cfg.systems for r in s.separations]
    dataset = generate_dataset(specs, grid, _kernel(cfg.kernel), provenance=cfg.provenance, seed=cfg.seed)
    save_dataset(dataset, run.path("reports", cfg.output))
    rows = [{"label": r.spec.label, "R": r.spec.separation, "E_ref": r.energy} for r in dataset.records]
    run.write_json("reports", "dataset_summary.json", {"records": rows})
    return {"records": len(rows)}


def _profile_outputs(run: RunDirectory, name: str, profile) -> None:
    run.write_csv("reports", f"{name}.csv", profile.rows, PROFILE_COLUMNS)
    run.write_json("reports", f"{name}.json", {"metrics": profile.metrics.as_dict(), "points": profile.rows})


def cmd_train(cfg, run: RunDirectory) -> dict:
    data = _dataset(cfg.dataset)
    model, theta0, spec = load_model(cfg.model, data.grid.n_points, cfg.seed)
    progress = lambda row: log.info("epoch %d train %.6e val %.6e", row["epoch"], row["train_loss"], row["val_loss"])  # noqa: E731
    result = fit(model, data.records, data.grid, data.kernel, cfg.scf, cfg.train, theta0=theta0, progress=progress)
    result.write_log(run.path("logs", "train_log.csv"))
    provenance = f"dataset={cfg.dataset} run_id={run.run_id}"
    extra = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss, "status": result.status}
    save_checkpoint(run.path("checkpoints", "best.json"), spec, result.theta, seed=cfg.seed, provenance=provenance, extra=extra)
    save_checkpoint(run.path("checkpoints", "final.json"), spec, result.theta_final, seed=cfg.seed, provenance=provenance, extra=extra)
    records = _pick(data.records, cfg.eval_indices)
    profile = evaluate_profile(model, result.theta, records, data.grid, data.kernel, cfg.eval_scf)
    _profile_outputs(run, "profile", profile)
    summary = {"status": result.status, "best_epoch": result.best_epoch, **profile.metrics.as_dict()}
    if cfg.baseline is not None:
        base_model, base_theta, _ = load_model(cfg.baseline, data.grid.n_points, cfg.seed)
        base = evaluate_profile(base_model, base_theta, records, data.grid, data.kernel, cfg.eval_scf)
        _profile_outputs(run, "baseline_profile", base)
        summary["baseline"] = base.metrics.as_dict()
        summary["mse_ratio"] = base.metrics.avg_mse_density / profile.metrics.avg_mse_density
    run.write_json("reports", "summary.json", summary)
    return summary


def cmd_eval(cfg, run: RunDirectory) -> dict:
    data = _dataset(cfg.dataset)
    model, theta, _ = load_model(cfg.model, data.grid.n_points, cfg.seed)
    profile = evaluate_profile(model, theta, _pick(data.records, cfg.indices), data.grid, data.kernel, cfg.eval_scf)
    _profile_outputs(run, "profile", profile)
    return profile.metrics.as_dict()


def cmd_noise_sweep(cfg, run: RunDirectory) -> dict:
    data = _dataset(cfg.dataset)
    spec = load_model(cfg.model, data.grid.n_points, cfg.seed)[2]
    rows = experiments.noise_sweep(
        data.records, data.grid, data.kernel, spec, cfg.scf, cfg.train, cfg.sigmas, cfg.seeds, cfg.tail_epochs, cfg.eval_scf, cfg.workers
    )
    slope = experiments.noise_slope(rows, cfg.fit_sigmas)
    run.write_csv("reports", "noise_sweep.csv", rows, NOISE_COLUMNS)
    summary = {"slope": slope, "fit_sigmas": cfg.fit_sigmas, "mean_loss": experiments.mean_losses(rows)}
    run.write_json("reports", "noise_sweep.json", {**summary, "rows": rows})
    return summary


def cmd_shot_sweep(cfg, run: RunDirectory) -> dict:
    scaling, slope = experiments.shot_scaling(cfg.scaling_shots, cfg.scaling_repeats, cfg.seed)
    run.write_csv("reports", "shot_scaling.csv", scaling, ["shots", "std", "bias"])
    data = _dataset(cfg.dataset)
    spec = load_model(cfg.model, data.grid.n_points, cfg.seed)[2]
    cells = [(p, None) for p in cfg.gate_noise] + [(0.0, n) for n in cfg.shots]
    rows = experiments.shot_gate_sweep(data.records, data.grid, data.kernel, spec, cfg.scf, cfg.train, cells, cfg.eval_scf, cfg.seed, cfg.workers)
    run.write_csv("reports", "shot_gate.csv", rows, SHOT_GATE_COLUMNS)
    summary = {"shot_slope": slope}
    run.write_json("reports", "shot_sweep.json", {**summary, "scaling": scaling, "cells": rows})
    return summary


def cmd_stability(cfg, run: RunDirectory) -> dict:
    real = None
    if cfg.real is not None:
        r = cfg.real
        grid = _grid(r.grid)
        model, theta = None, None
        if r.model is not None:
            model, theta, _ = load_model(r.model, grid.n_points, cfg.seed)
        real = dict(system=make_system(r.label, r.separation), grid=grid, kernel=_kernel(r.kernel), model=model, theta=theta, scf=r.scf, width=r.width)
    report = experiments.stability_verify(cfg.kappas, cfg.alpha, cfg.epsilons, cfg.dimension, cfg.seed, real)
    run.write_csv("reports", "stability_synthetic.csv", report.synthetic, SYNTHETIC_COLUMNS)
    if report.real:
        run.write_csv("reports", "stability.csv", report.real, STABILITY_COLUMNS)
    summary = report.summary()
    run.write_json("reports", "stability.json", {**summary, "synthetic": report.synthetic, "real": report.real})
    return summary


def cmd_lipschitz(cfg, run: RunDirectory) -> dict:
    specs = [qsim.CircuitSpec(**c) for c in cfg.circuits]
    rows = experiments.lipschitz_suite(specs, cfg.n_theta, cfg.n_samples, cfg.seed)
    run.write_csv("reports", "lipschitz.csv", rows, LIPSCHITZ_COLUMNS)
    summary = {"max_ratio": max(r["ratio"] for r in rows), "n_specs": len(rows)}
    run.write_json("reports", "lipschitz.json", {**summary, "rows": rows})
    return summary


def cmd_resources(cfg, run: RunDirectory) -> dict:
    est = experiments.resource_estimate(cfg.n_param, cfg.n_grid, cfg.n_ks, cfg.n_shots, cfg.n_epochs)
    summary = est.as_dict()
    run.write_json("reports", "resources.json", summary)
    print(experiments.render_resources(est))
    return summary


def cmd_scf_debug(cfg, run: RunDirectory) -> dict:
    grid = _grid(cfg.grid)
    system = make_system(cfg.label, cfg.separation, cfg.occupation, cfg.temperature)
    model, theta = None, None
    if cfg.model is not None:
        model, theta, _ = load_model(cfg.model, grid.n_points, cfg.seed)
    traj = run_scf(system, model, theta, cfg.scf, grid, _kernel(cfg.kernel))
    traj.write_csv(run.path("reports", "trajectory.csv"))
    state = traj.final_state()
    run.write_csv(
        "reports", "final_density.csv", [{"x": float(x), "density": float(n)} for x, n in zip(grid.points, state.density)], ["x", "density"]
    )
    summary = {
        "converged": traj.converged,
        "iterations": traj.iterations_used,
        "energy": traj.final_energy,
        "breakdown": traj.steps[-1].energy.as_dict(),
        "orbital_energies": state.orbital_energies.tolist(),
        "occupations": state.occupations.tolist(),
        "chemical_potential": state.chemical_potential,
    }
    run.write_json("reports", "scf_debug.json", summary)
    return summary


COMMANDS = {
    "dataset-gen": (cmd_dataset_gen, "generate reference energies and densities by exact diagonalization"),
    "train": (cmd_train, "train an XC model through the unrolled SCF"),
    "eval": (cmd_eval, "evaluate a model along a dissociation profile"),
    "noise-sweep": (cmd_noise_sweep, "train under Gaussian XC energy noise and fit the loss scaling"),
    "shot-sweep": (cmd_shot_sweep, "shot-count scaling and gate-noise / finite-shot training cells"),
    "stability": (cmd_stability, "SCF stability under bounded XC errors (synthetic map and real SCF)"),
    "lipschitz": (cmd_lipschitz, "sampled input derivatives against the spectral Lipschitz bound"),
    "resources": (cmd_resources, "measurement budget for training on hardware"),
    "scf-debug": (cmd_scf_debug, "run one SCF and dump its trajectory"),
}


def _defaults_epilog(command: str) -> str:
    schema = SCHEMAS[command]
    lines = ["config fields (default):"]
    for name, info in schema.model_fields.items():
        default = "required" if info.is_required() else repr(info.get_default(call_default_factory=True))
        if len(default) > 70:
            default = default[:67] + "..."
        lines.append(f"  {name}: {default}")
    presets = sorted(PRESETS.get(command, {}))
    if presets:
        lines.append("presets: " + ", ".join(presets))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qxc", description="Learned exchange-correlation functionals for 1D Kohn-Sham DFT.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_defaults_epilog(name), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", "--preset", dest="config", help="YAML config file or preset name")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config field (dotted path, YAML value)")
        p.add_argument("--run-dir", help="output directory (overrides run_dir)")
    return parser


def _field_path(exc: ValidationError) -> str:
    err = exc.errors()[0]
    return ".".join(str(part) for part in err["loc"])


def error_record(exc: BaseException) -> dict:
    if isinstance(exc, ValidationError):
        err = exc.errors()[0]
        return {"code": "config", "message": err["msg"], "field": _field_path(exc)}
    if isinstance(exc, QxcError):
        return {"code": exc.code, "message": str(exc), "field": None}
    if isinstance(exc, OSError):
        return {"code": "io", "message": str(exc), "field": getattr(exc, "filename", None)}
    return {"code": "internal", "message": f"{type(exc).__name__}: {exc}", "field": None}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        overrides = list(args.overrides)
        if args.run_dir:
            overrides.append(f"run_dir={json.dumps(args.run_dir)}")
        cfg = build_config(args.command, args.config, overrides)
        run = RunDirectory(cfg).create()
        summary = COMMANDS[args.command][0](cfg, run)
        run.finish("ok")
    except (ValidationError, QxcError, OSError) as exc:
        record = error_record(exc)
        print(json.dumps({"error": record}), file=sys.stderr)
        if run is not None:
            run.finish("error", record)
        return 2 if record["code"] == "config" else 1
    print(json.dumps({"run_dir": str(run.root), "run_id": run.run_id, "summary": jsonable(summary)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
