import json
import subprocess
import sys
from pathlib import Path

import pytest

from qrbsde.cli import main, run
from qrbsde.config import ConfigError, config_hash, load_config


BASE = {
    "schema_version": 1,
    "experiment": "solve-rbsde",
    "seed": 0,
    "model": {
        "drift": "linear:rate=0.06",
        "diffusion": "linear:rate=0.2",
        "terminal": "put:strike=1.0",
        "obstacle": "put:strike=1.0",
        "generator": "quad:gamma=1",
        "x0": 1.0,
        "horizon": 1.0,
        "sigma_star": 0.6
    },
    "discretization": {"n_steps": 40, "n_space": 60, "n_time": 60,
                       "x_min": 0.0, "x_max": 3.0},
}


def _write(tmp_path, doc, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _base(**updates):
    doc = json.loads(json.dumps(BASE))
    for key, value in updates.items():
        if isinstance(value, dict) and key in doc:
            doc[key].update(value)
        else:
            doc[key] = value
    return doc


def test_solve_rbsde_artifacts(tmp_path):
    out = tmp_path / "out"
    code = run(_write(tmp_path, _base()), output_dir=str(out))
    assert code == 0
    for name in ("solution.csv", "summary.json", "solution.png", "reports.json",
                 "manifest.json"):
        assert (out / name).is_file(), name
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"y0", "k_T_mean", "flat_off_residual"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(_base())
    assert "wall_time_s" in manifest and "versions" in manifest


def test_solve_pde_artifacts(tmp_path):
    out = tmp_path / "out"
    code = run(_write(tmp_path, _base(experiment="solve-pde")), output_dir=str(out))
    assert code == 0
    for name in ("pde.csv", "pde.png", "growth.json", "reports.json"):
        assert (out / name).is_file(), name


def test_solve_pde_penalized_scheme(tmp_path):
    doc = _base(experiment="solve-pde", pde_scheme="penalized")
    out = tmp_path / "out"
    assert run(_write(tmp_path, doc), output_dir=str(out)) == 0
    reports = json.loads((out / "reports.json").read_text())
    by_name = {r["name"]: r for r in reports}
    assert by_name["obstacle-domination"]["status"] == "pass"


def test_x_radius_domain(tmp_path):
    doc = _base()
    doc["discretization"] = {"n_steps": 20, "n_space": 40, "n_time": 40, "x_radius": 0.9}
    out = tmp_path / "out"
    assert run(_write(tmp_path, doc), experiment="solve-pde", output_dir=str(out)) == 0
    rows = (out / "pde.csv").read_text().strip().split("\n")[1:]
    xs = sorted({float(r.split(",")[1]) for r in rows})
    assert xs[0] == pytest.approx(0.1) and xs[-1] == pytest.approx(1.9)


def test_stability_run(tmp_path):
    doc = _base(experiment="stability")
    doc["stability"] = {"ns": [1, 2, 4, 8], "amplitude": 0.001}
    out = tmp_path / "out"
    assert run(_write(tmp_path, doc), output_dir=str(out)) == 0
    rows = (out / "stability.csv").read_text().strip().split("\n")
    assert rows[0] == "n,sup_error,exp_stat"
    assert len(rows) == 5


def test_cross_validate_run(tmp_path):
    doc = _base(experiment="cross-validate",
                discretization={"n_steps": 100, "n_space": 200, "n_time": 200,
                                "x_min": 0.0, "x_max": 3.0})
    doc["probes"] = [[0.0, 1.0], [0.25, 1.0]]
    doc["tolerances"] = {"cross_validate": 0.05}
    out = tmp_path / "out"
    assert run(_write(tmp_path, doc), output_dir=str(out)) == 0
    assert (out / "cross_validate.png").is_file()


def test_optimal_stop_json(tmp_path):
    doc = _base(experiment="optimal-stop", oracle=True,
                discretization={"n_steps": 4})
    doc["model"].update({"drift": "zero", "diffusion": "const:value=1.0",
                         "terminal": "put:strike=0.3", "obstacle": "put:strike=0.3",
                         "x0": 0.0})
    out = tmp_path / "out"
    assert run(_write(tmp_path, doc), output_dir=str(out)) == 0
    payload = json.loads((out / "optimal_stop.json").read_text())
    assert set(payload) == {"value", "tau_star_nodes", "enumeration_gap"}
    assert payload["enumeration_gap"] <= 1e-10


def test_bundled_config_resolution(tmp_path):
    assert run("optimal-stop", output_dir=str(tmp_path / "b")) == 0


def test_unknown_config_exits_2(tmp_path, capsys):
    assert run(str(tmp_path / "missing.json")) == 2
    assert "config error" in capsys.readouterr().err


def test_invalid_json_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(str(p)) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_negative_gamma_exit_2_names_field(tmp_path, capsys):
    doc = _base(model={"generator": "quad:gamma=-1"})
    assert run(_write(tmp_path, doc), output_dir=str(tmp_path / "o")) == 2
    err = capsys.readouterr().err
    assert "model.generator" in err and "gamma" in err


def test_validation_pointers():
    with pytest.raises(ConfigError, match="model.varpi"):
        load_config(_base(model={"varpi": 2.5}))
    with pytest.raises(ConfigError, match="discretization.n_steps"):
        load_config(_base(discretization={"n_steps": 0}))
    with pytest.raises(ConfigError, match="experiment"):
        load_config(_base(experiment="banana"))
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(_base(schema_version=99))
    with pytest.raises(ConfigError, match="model.drift"):
        load_config(_base(model={"drift": "weird:stuff=1"}))
    with pytest.raises(ConfigError, match="stability.ns"):
        doc = _base()
        doc["stability"] = {"ns": [4, 2]}
        load_config(doc)


def test_kappa_dt_validated():
    doc = _base(model={"generator": "lipschitz_quad:gamma=1,kappa=50,shape=convex"},
                discretization={"n_steps": 10, "n_space": 60, "n_time": 60,
                                "x_min": 0.0, "x_max": 3.0})
    with pytest.raises(ConfigError, match="kappa\\*dt"):
        load_config(doc)


def test_failing_report_exits_1(tmp_path, capsys):
    doc = _base(experiment="cross-validate",
                discretization={"n_steps": 20, "n_space": 40, "n_time": 40,
                                "x_min": 0.0, "x_max": 3.0})
    doc["probes"] = [[0.0, 1.0]]
    doc["tolerances"] = {"cross_validate": 0.0}
    assert run(_write(tmp_path, doc), output_dir=str(tmp_path / "o")) == 1
    assert "not passing" in capsys.readouterr().err


def test_seed_and_experiment_overrides(tmp_path):
    doc = _base()
    out = tmp_path / "o"
    assert run(_write(tmp_path, doc), seed=7, experiment="solve-pde",
               output_dir=str(out)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["experiment"] == "solve-pde"


def test_byte_identical_artifacts(tmp_path):
    doc = _base(experiment="property-suite",
                discretization={"n_steps": 60, "n_space": 60, "n_time": 60,
                                "x_min": 0.0, "x_max": 3.0})
    path = _write(tmp_path, doc)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run(path, output_dir=str(out1)) == 0
    assert run(path, output_dir=str(out2)) == 0
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    for name in names:
        if name == "manifest.json":  # carries wall time by design
            continue
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "qrbsde.cli", "optimal-stop",
         "--output-dir", str(tmp_path / "o")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "optimal-stop-oracle" in proc.stdout


def test_main_parses_args(tmp_path):
    assert main(["optimal-stop", "--output-dir", str(tmp_path / "m")]) == 0
