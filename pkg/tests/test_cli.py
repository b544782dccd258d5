import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

import archcal.solver
from archcal.calibration import ParetoFront
from archcal.cli import EXIT_ERROR, EXIT_PRELOAD, EXIT_SCHEMA, EXIT_SOLVER, RunManifest, main
from archcal.scenarios import preset
from archcal.solver import ResponseTrace


def _write(path, data):
    path.write_text(json.dumps(data))
    return path


def test_console_script_version():
    exe = shutil.which("archcal")
    cmd = [exe] if exe else [sys.executable, "-m", "archcal.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("archcal ")


def test_mesh_command_and_manifest(tmp_path):
    out = tmp_path / "m"
    assert main(["mesh", "--scenario", "bare-weak-hybrid", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["convergence"]["dof"] == 812 and man["convergence"]["interfaces"] == 40
    assert set(man["outputs"]) == {"mesh.json", "mesh.vtk"}
    assert RunManifest.verify(out) == []
    (out / "mesh.json").write_text("{}")
    assert RunManifest.verify(out) == ["mesh.json"]
    # no staging directories left behind
    assert [p.name for p in tmp_path.iterdir()] == ["m"]


def test_schema_errors_exit_3(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", {**preset("bare-weak-hybrid"), "tier": "micro"})
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    assert "tier" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text('{"name": "x",')
    assert main(["mesh", "--scenario", str(broken), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    d = preset("bare-weak-hybrid")
    del d["materials"]["ring_joint"]
    missing = _write(tmp_path / "missing.json", d)
    assert main(["mesh", "--scenario", str(missing), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    assert main(["driver", "--scenario", "nope", "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    assert not (tmp_path / "o").exists()


def test_unknown_preset_lists_available(tmp_path, capsys):
    assert main(["mesh", "--scenario", "bare-medium-meso", "--out", str(tmp_path / "o")]) == EXIT_SCHEMA
    assert "bare-weak-meso" in capsys.readouterr().err


@pytest.mark.slow
def test_preload_failure_exit_2_without_partial_output(tmp_path):
    d = preset("bare-weak-hybrid")
    d["protocol"]["preloads"][0]["force"] = 400.0  # far beyond the collapse load
    d["protocol"]["min_step_fraction"] = 0.25
    sc = _write(tmp_path / "big.json", d)
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(sc), "--out", str(out)]) == EXIT_PRELOAD
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["big.json"]


def test_solver_failure_exit_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise archcal.solver.SolverError("non-finite internal forces")
    monkeypatch.setattr(archcal.solver, "solve_quasi_static", boom)
    out = tmp_path / "o"
    assert main(["run", "--scenario", "bare-weak-hybrid", "--out", str(out)]) == EXIT_SOLVER
    assert not out.exists()


def test_driver_command(tmp_path):
    out = tmp_path / "d"
    assert main(["driver", "--scenario", "driver-interface-shear-weak", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"driver.csv", "driver.svg", "manifest.json"}
    assert RunManifest.verify(out) == []


def test_calibrate_toy_seeded(tmp_path):
    prob = {"kind": "toy", "unknowns": [["x", -5.0, 5.0]], "objectives": ["f1", "f2"],
            "ga": {"population": 12, "generations": 6, "seed": 0}}
    cfg = _write(tmp_path / "toy.json", prob)
    fronts = []
    for k in range(2):
        out = tmp_path / f"c{k}"
        assert main(["calibrate", "--scenario", str(cfg), "--out", str(out), "--seed", "7"]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == 7
        fronts.append(ParetoFront.read_csv(out / "front.csv"))
    np.testing.assert_array_equal(fronts[0].params, fronts[1].params)
    bad = _write(tmp_path / "bad.json", {**prob, "kind": "quantum"})
    assert main(["calibrate", "--scenario", str(bad), "--out", str(tmp_path / "x")]) == EXIT_SCHEMA


def test_plot_command(tmp_path):
    tr = ResponseTrace()
    for i in range(5):
        tr.append(i, float(i), float(i * (4 - i)), 0.5 * i, -0.1 * i, {}, {})
    tr.write_csv(tmp_path / "trace.csv")
    out = tmp_path / "p"
    assert main(["plot", "--out", str(out), str(tmp_path / "trace.csv")]) == 0
    assert (out / "traces.svg").read_text().lstrip().startswith("<?xml")
    # empty trace is rejected
    ResponseTrace().write_csv(tmp_path / "empty.csv")
    assert main(["plot", "--out", str(out), str(tmp_path / "empty.csv")]) == EXIT_ERROR
    # missing file
    assert main(["plot", "--out", str(out), str(tmp_path / "nope.csv")]) == EXIT_ERROR
