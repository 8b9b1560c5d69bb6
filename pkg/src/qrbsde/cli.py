"""Command-line entry point: one experiment per invocation, deterministic artifacts.

    qrbsde <config.json> [--seed N] [--experiment NAME] [--output-dir DIR]

The argument is a config file path or the name of a bundled config (e.g.
``cole-hopf``).  Exit codes: 0 all reports pass, 1 experiment or solver
failure, 2 invalid configuration.  Every run writes a manifest with the
config hash, seed, library versions and wall time; the manifest is the one
file excluded from byte-for-byte determinism because it records wall time.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, figures
from .config import ConfigError, RunConfig, config_hash, load_config
from .experiments import (
    PropertyReport,
    cross_validate,
    property_suite,
    stability_experiment,
)
from .generators import ParameterSet, apriori_constants
from .lattice import LatticeBuildError, build_lattice
from .pde import PdeSolveError, export_pde_csv, growth_check, solve_obstacle_pde
from .solver import (
    SchemeError,
    SolverBlowupError,
    apriori_bound_check,
    export_solution_csv,
    export_solution_json,
    flat_off_residual,
    solve_rbsde,
)
from .stopping import (
    EnumerationCapError,
    brute_force_optimal_value,
    optimal_stop,
    reward_from_data,
)

SOLVER_ERRORS = (SchemeError, SolverBlowupError, PdeSolveError, LatticeBuildError,
                 OverflowError, ValueError)


def _resolve_config_path(arg: str) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    name = arg.replace("-", "_")
    if not name.endswith(".json"):
        name += ".json"
    bundled = resources.files("qrbsde").joinpath("configs", name)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config: no such file {arg!r} and no bundled config named {arg!r}")


def _write_json(path: Path, payload) -> str:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


def _print_reports(reports) -> None:
    if not reports:
        return
    wname = max(len(r.name) for r in reports)
    print(f"{'report':<{wname}}  {'status':<12}  {'metric':>12}  {'tolerance':>12}  kind")
    for r in reports:
        metric = f"{r.metric:.3e}" if np.isfinite(r.metric) else "n/a"
        print(f"{r.name:<{wname}}  {r.status:<12}  {metric:>12}  {r.tolerance:>12.3e}  {r.kind}")


def _run_solve_rbsde(cfg: RunConfig, out: Path):
    lattice = build_lattice(cfg.model, cfg.t0, cfg.x0, cfg.n_steps)
    sol = solve_rbsde(lattice, cfg.model.parameter_set())
    artifacts = []
    export_solution_csv(sol, out / "solution.csv")
    artifacts.append(str(out / "solution.csv"))
    export_solution_json(sol, out / "summary.json")
    artifacts.append(str(out / "summary.json"))
    artifacts.append(figures.render_solution(sol, out / "solution.png"))
    consts = apriori_constants(cfg.model.generator, cfg.model.horizon)
    reports = [
        PropertyReport.judged("flat-off", abs(flat_off_residual(sol)),
                              cfg.tolerances.get("flat_off", 0.0)),
        PropertyReport.judged(
            "reflection",
            max(0.0, -min(float(np.min(a - b)) for a, b in zip(sol.Y, sol.L))),
            cfg.tolerances.get("reflection", 1e-12)),
        PropertyReport.judged("apriori-bound",
                              apriori_bound_check(sol, cfg.model.parameter_set(), consts),
                              cfg.tolerances.get("apriori", 1e-12)),
    ]
    return reports, artifacts


def _run_solve_pde(cfg: RunConfig, out: Path):
    sol = solve_obstacle_pde(cfg.model, cfg.pde_grid(), scheme=cfg.pde_scheme)
    artifacts = []
    export_pde_csv(sol, out / "pde.csv")
    artifacts.append(str(out / "pde.csv"))
    artifacts.append(figures.render_pde(sol, out / "pde.png"))
    growth = growth_check(sol, cfg.model)
    artifacts.append(_write_json(out / "growth.json", {
        "c_fit": growth.c_fit, "varpi": growth.varpi,
        "parabolic_margin": sol.parabolic_margin}))
    pen_tol = 10.0 * (sol.grid.dt if cfg.pde_scheme == "penalized" else 1e-13)
    reports = [
        PropertyReport.judged(
            "obstacle-domination",
            max(0.0, -float(np.min(sol.u - sol.obstacle))),
            cfg.tolerances.get("obstacle_domination", pen_tol)),
        PropertyReport.judged(
            "terminal-exact",
            float(np.max(np.abs(sol.u[-1] - np.asarray(cfg.model.terminal_payoff(sol.grid.xs))))),
            0.0),
    ]
    return reports, artifacts


def _run_optimal_stop(cfg: RunConfig, out: Path):
    lattice = build_lattice(cfg.model, cfg.t0, cfg.x0, cfg.n_steps)
    reward = reward_from_data(lattice, cfg.model.obstacle_fn, cfg.model.terminal_payoff)
    value, tau_star = optimal_stop(lattice, cfg.model.generator, reward)
    payload = {
        "value": value,
        "tau_star_nodes": [[i, j] for i in range(lattice.n_steps + 1)
                           for j in np.nonzero(tau_star.stop_flag[i])[0].tolist()],
    }
    reports = []
    if cfg.oracle:
        try:
            brute, _ = brute_force_optimal_value(lattice, cfg.model.generator, reward)
            payload["enumeration_gap"] = abs(value - brute)
            reports.append(PropertyReport.judged(
                "optimal-stop-oracle", abs(value - brute),
                cfg.tolerances.get("optimal_stop", 1e-10)))
        except EnumerationCapError as exc:
            payload["enumeration_gap"] = None
            reports.append(PropertyReport.inconclusive(
                "optimal-stop-oracle", cfg.tolerances.get("optimal_stop", 1e-10),
                details={"reason": str(exc)}))
    artifacts = [_write_json(out / "optimal_stop.json", payload)]
    if reports:
        artifacts.append(figures.render_reports(reports, out / "reports.png"))
    return reports, artifacts


def _default_probes(cfg: RunConfig) -> list:
    T = cfg.model.horizon
    dx = (cfg.x_max - cfg.x_min) / 10.0
    return [(cfg.t0, cfg.x0), (cfg.t0 + T / 4.0, cfg.x0), (cfg.t0 + T / 2.0, cfg.x0),
            (cfg.t0, cfg.x0 + dx), (cfg.t0, max(cfg.x_min, cfg.x0 - dx))]


def _run_cross_validate(cfg: RunConfig, out: Path):
    probes = cfg.probes or _default_probes(cfg)
    rep = cross_validate(cfg.model, probes, cfg.n_steps, cfg.pde_grid(),
                         tolerance=cfg.tolerances.get("cross_validate", 0.02),
                         scheme=cfg.pde_scheme)
    artifacts = [figures.render_cross_validate(rep.details, out / "cross_validate.png")]
    return [rep], artifacts


def _run_property_suite(cfg: RunConfig, out: Path):
    reports = property_suite(cfg.model, cfg.x0, n_steps=cfg.n_steps, seed=cfg.seed,
                             tolerances=cfg.tolerances)
    lattice = build_lattice(cfg.model, cfg.t0, cfg.x0, cfg.n_steps)
    sol = solve_rbsde(lattice, cfg.model.parameter_set())
    artifacts = []
    export_solution_csv(sol, out / "solution.csv")
    artifacts.append(str(out / "solution.csv"))
    export_solution_json(sol, out / "summary.json")
    artifacts.append(str(out / "summary.json"))
    artifacts.append(figures.render_solution(sol, out / "solution.png"))
    artifacts.append(figures.render_reports(reports, out / "reports.png"))
    return reports, artifacts


def _run_stability(cfg: RunConfig, out: Path):
    lattice = build_lattice(cfg.model, cfg.t0, cfg.x0, cfg.n_steps)
    base = cfg.model.parameter_set()
    perturbations = []
    for n in cfg.stability_ns:
        eps = cfg.stability_amplitude / n
        perturbations.append(ParameterSet(
            terminal=(lambda e: lambda x: np.asarray(base.terminal(x)) + e)(eps),
            obstacle=(lambda e: lambda t, x: np.asarray(base.obstacle(t, x)) + e)(eps),
            generator=base.generator.shifted(eps)))
    rep = stability_experiment(lattice, base, perturbations, ns=cfg.stability_ns,
                               exp_limit_tolerance=cfg.tolerances.get("stability_exp", 1e-3))
    artifacts = []
    rows = ["n,sup_error,exp_stat"]
    for n, e, s in zip(rep.details["ns"], rep.details["sup_errors"], rep.details["exp_stats"]):
        rows.append(f"{n},{e:.17g},{s:.17g}")
    (out / "stability.csv").write_text("\n".join(rows) + "\n")
    artifacts.append(str(out / "stability.csv"))
    artifacts.append(figures.render_stability(rep.details, out / "stability.png"))
    return [rep], artifacts


_RUNNERS = {
    "solve-rbsde": _run_solve_rbsde,
    "solve-pde": _run_solve_pde,
    "optimal-stop": _run_optimal_stop,
    "cross-validate": _run_cross_validate,
    "property-suite": _run_property_suite,
    "stability": _run_stability,
}


def run(config_path: str, seed: int | None = None, experiment: str | None = None,
        output_dir: str | None = None) -> int:
    """Execute one experiment; returns the process exit code."""
    started = time.time()
    try:
        path = _resolve_config_path(config_path)
        doc = json.loads(path.read_text())
        overrides = {"seed": seed, "experiment": experiment, "output_dir": output_dir}
        cfg = load_config(doc, {k: v for k, v in overrides.items() if v is not None})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: {config_path}: not valid JSON ({exc})", file=sys.stderr)
        return 2

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        reports, artifacts = _RUNNERS[cfg.experiment](cfg, out)
    except SOLVER_ERRORS as exc:
        print(f"experiment failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        flagged = PropertyReport(name=cfg.experiment, status="fail", metric=float("nan"),
                                 tolerance=float("nan"), details={"error": str(exc)})
        _write_json(out / "reports.json", [flagged.to_dict()])
        return 1

    report_path = _write_json(out / "reports.json", [r.to_dict() for r in reports])
    artifacts.append(report_path)
    manifest = {
        "config_hash": config_hash(cfg.raw),
        "seed": cfg.seed,
        "experiment": cfg.experiment,
        "versions": {
            "qrbsde": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "wall_time_s": time.time() - started,
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
    }
    _write_json(out / "manifest.json", manifest)

    _print_reports(reports)
    all_pass = all(r.status == "pass" for r in reports)
    if not all_pass:
        bad = [r.name for r in reports if r.status != "pass"]
        print(f"not passing: {', '.join(bad)}", file=sys.stderr)
    return 0 if all_pass else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qrbsde",
        description="Quadratic reflected BSDE laboratory: solvers and theorem checks.")
    parser.add_argument("config", help="config file path or bundled config name")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--experiment", default=None, help="override the config experiment")
    parser.add_argument("--output-dir", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    return run(args.config, seed=args.seed, experiment=args.experiment,
               output_dir=args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
