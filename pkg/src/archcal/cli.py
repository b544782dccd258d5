"""Command-line front end: ``archcal mesh|run|calibrate|plot|driver``.

Exit codes: 0 success, 1 other errors, 2 preload stage did not converge,
3 scenario or configuration schema error, 4 solver failure after the preload.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_PRELOAD, EXIT_SCHEMA, EXIT_SOLVER = 0, 1, 2, 3, 4

log = logging.getLogger("archcal")


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0.0.0"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    scenario: str
    scenario_hash: str
    seed: int
    tool_version: str = field(default_factory=tool_version)
    wall_time_s: float = 0.0
    convergence: dict = field(default_factory=dict)
    failure_label: str = ""
    status: str = ""
    outputs: dict = field(default_factory=dict)

    def add_outputs(self, out_dir: Path) -> None:
        for p in sorted(out_dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                self.outputs[str(p.relative_to(out_dir))] = file_hash(p)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, default=float) + "\n")
        return path

    @staticmethod
    def verify(out_dir) -> list:
        """Files whose hash no longer matches the manifest (empty when consistent)."""
        out_dir = Path(out_dir)
        man = json.loads((out_dir / "manifest.json").read_text())
        bad = []
        for rel, h in man["outputs"].items():
            p = out_dir / rel
            if not p.exists() or file_hash(p) != h:
                bad.append(rel)
        return bad


class _Staging:
    """Write outputs into a temporary directory and move them into place only on success."""

    def __init__(self, out: Path):
        self.out = Path(out)

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".archcal-", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.out.mkdir(parents=True, exist_ok=True)
            for p in self.tmp.iterdir():
                dest = self.out / p.name
                if dest.is_dir():
                    shutil.rmtree(dest)
                p.replace(dest)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _convergence_summary(res) -> dict:
    steps = [s for s in res.log if s.stage == 2]
    return {"steps": len(steps), "preload_steps": len(res.log) - len(steps),
            "mean_iterations": float(np.mean([s.iterations for s in res.log])) if res.log else 0.0,
            "max_residual_ratio": max((s.residual_ratio for s in res.log), default=0.0),
            "max_reaction_balance": max((s.reaction_balance for s in res.log), default=0.0),
            "min_step_fraction": min((s.size_fraction for s in res.log), default=1.0),
            "peak_force_kN_per_m": res.trace.peak_force}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_mesh(args) -> int:
    from .mesh import write_vtk
    from .scenarios import build_mesh, resolve, scenario_hash
    sc = resolve(args.scenario)
    mesh = build_mesh(sc)
    with _Staging(args.out) as tmp:
        mesh.save_json(tmp / "mesh.json")
        write_vtk(mesh, tmp / "mesh.vtk", title=sc.name)
        man = RunManifest("mesh", sc.name, scenario_hash(sc), args.seed)
        man.convergence = {"nodes": len(mesh.nodes), "dof": mesh.n_dof, "quads": len(mesh.quads),
                           "tris": len(mesh.tris), "interfaces": len(mesh.ifaces)}
        man.add_outputs(tmp)
        man.write(tmp)
    print(f"{sc.name}: {len(mesh.quads)} quads, {len(mesh.tris)} triangles, "
          f"{len(mesh.ifaces)} interfaces, {mesh.n_dof} dof -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .scenarios import build, resolve, scenario_hash
    from .solver import solve_quasi_static
    from . import plots
    sc = resolve(args.scenario)
    mesh, mats, prot = build(sc)
    t0 = time.time()
    with _Staging(args.out) as tmp:
        res = solve_quasi_static(mesh, mats, prot, dump_dir=tmp)
        res.trace.write_csv(tmp / "trace.csv")
        res.trace.write_partition_csv(tmp / "partitions.csv")
        if len(res.trace) > 1:
            plots.plot_traces({sc.name: res.trace}, tmp / "trace.svg", title=sc.name)
        man = RunManifest("run", sc.name, scenario_hash(sc), args.seed,
                          wall_time_s=time.time() - t0, convergence=_convergence_summary(res),
                          failure_label=res.label, status=res.status)
        man.add_outputs(tmp)
        man.write(tmp)
    print(f"{sc.name}: peak {res.trace.peak_force:.3f} kN/m, {len(res.trace) - 1} steps, "
          f"status {res.status}, label {res.label}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import load_problem, run_calibration
    problem = load_problem(args.scenario)
    if args.seed is not None:
        problem.ga.seed = int(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    rep = run_calibration(problem, out, jobs=max(1, args.jobs), pick=args.pick)
    man = RunManifest("calibrate", str(args.scenario), hashlib.sha256(
        json.dumps(problem.to_dict(), sort_keys=True).encode()).hexdigest()[:16], problem.ga.seed,
        wall_time_s=time.time() - t0,
        convergence={"front_size": len(rep.front), "selected": rep.selection.index,
                     "omega_star_min": rep.selection.omega_star_min})
    man.add_outputs(out)
    man.write(out)
    x = rep.front.params[rep.selection.index]
    print(f"front of {len(rep.front)} solutions; selected {rep.selection.index} "
          f"(omega* {rep.selection.omega_star_min:.4f}): " +
          ", ".join(f"{n}={v:.4g}" for n, v in zip(rep.front.names, x)))
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots
    from .calibration import ParetoFront, normalize_and_select
    from .solver import ResponseTrace
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = {}
    written = []
    for item in args.inputs:
        p = Path(item)
        if not p.exists():
            raise FileNotFoundError(item)
        if p.suffix == ".vtk":
            dest = out / f"{p.stem}_{args.field}.svg"
            plots.plot_vtk_field(p, args.field, dest, title=p.stem)
            written.append(dest)
        elif p.name.startswith("front") and p.suffix == ".csv":
            front = ParetoFront.read_csv(p)
            if len(front) == 0:
                raise ValueError(f"{p}: empty front")
            sel = args.pick if args.pick is not None else normalize_and_select(front).index
            dest = out / f"{p.stem}.svg"
            plots.front_scatter(front, sel, dest)
            written.append(dest)
        else:
            tr = ResponseTrace.read_csv(p)
            if len(tr) < 2:
                raise ValueError(f"{p}: empty trace")
            traces[str(p.parent.name or p.stem)] = tr
    if traces:
        dest = out / "traces.svg"
        plots.plot_traces(traces, dest)
        written.append(dest)
    for w in written:
        print(w)
    return EXIT_OK


def cmd_driver(args) -> int:
    from .drivers import driver_preset, parse_driver, run_driver, write_table
    from . import plots
    src = str(args.scenario)
    try:
        data = driver_preset(src)
    except KeyError:
        p = Path(src)
        if not p.exists():
            from .scenarios import ScenarioError
            raise ScenarioError(f"no driver preset or file named {src!r}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            from .scenarios import ScenarioError
            raise ScenarioError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    spec = parse_driver(data)
    table = run_driver(spec)
    with _Staging(args.out) as tmp:
        write_table(table, tmp / "driver.csv")
        if spec.material.type == "continuum":
            x, y = ("eps_xy", "sig_xy") if spec.path.kind == "pure_shear" else ("eps_xx", "sig_xx")
        else:
            x, y = ("jump_n", "sigma") if spec.path.kind == "tension" else ("jump_t", "tau")
        plots.plot_driver(table, x, y, tmp / "driver.svg")
        man = RunManifest("driver", spec.name, hashlib.sha256(
            json.dumps(data, sort_keys=True).encode()).hexdigest()[:16], args.seed)
        man.add_outputs(tmp)
        man.write(tmp)
    print(f"{spec.name}: {len(table['step'])} rows -> {args.out}")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "run": cmd_run, "calibrate": cmd_calibrate, "plot": cmd_plot,
            "driver": cmd_driver}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="archcal", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"archcal {tool_version()}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=name != "plot",
                        help="preset name or JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0 if name != "calibrate" else None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--pick", type=int, default=None, help="override the selected front member")
        if name == "plot":
            sp.add_argument("inputs", nargs="+", help="trace CSV, front CSV or VTK files")
            sp.add_argument("--field", default="d", help="cell field for VTK heatmaps")
    return ap


def main(argv=None) -> int:
    from .calibration import CalibrationAbort, CalibrationConfigError
    from .scenarios import ScenarioError
    from .solver import PreloadError, SolverError
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, CalibrationConfigError) as exc:
        print(f"archcal: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except PreloadError as exc:
        print(f"archcal: {exc}", file=sys.stderr)
        return EXIT_PRELOAD
    except (SolverError, CalibrationAbort) as exc:
        print(f"archcal: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError, KeyError) as exc:
        print(f"archcal: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
