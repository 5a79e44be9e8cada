"""Command-line entry points: run-micro, run-meso, optimize, metrics, validate."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .meso import write_density_grid
from .objective import CongestionReport, congestion_metrics
from .optimize import CompassConfig, compass_search, write_schedule
from .results import fmt
from .scenario import ScenarioError, bundled_scenarios, load_scenario


def _add_common(p):
    p.add_argument("--scenario", required=True,
                   help="scenario file path or bundled name "
                        f"({', '.join(bundled_scenarios())})")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override run seed")
    p.add_argument("--steps", type=int, default=None, help="override step count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crowdevac",
        description="Leader-guided crowd evacuation: simulation and "
                    "control optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-micro", help="run the agent-based dynamics")
    _add_common(p)

    p = sub.add_parser("run-meso", help="run the mean-field dynamics")
    _add_common(p)
    p.add_argument("--batch", type=int, default=None, help="override batch size")

    p = sub.add_parser("optimize", help="compass search over leader schedules")
    _add_common(p)
    p.add_argument("--iters", type=int, default=50, help="compass iterations")
    p.add_argument("--scale", choices=("micro", "meso"), default="micro")
    p.add_argument("--batch", type=int, default=None, help="override batch size (meso)")

    p = sub.add_parser("metrics", help="re-emit the congestion table of a finished run")
    p.add_argument("--out", required=True, help="directory of a finished run")

    p = sub.add_parser("validate", help="load and validate a scenario")
    p.add_argument("--scenario", required=True)
    return parser


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out: Path, command, scenario, seed, steps, extra=None):
    files = {}
    for f in sorted(out.iterdir()):
        if f.name == "manifest.json" or not f.is_file():
            continue
        files[f.name] = {"sha256": _sha256(f), "bytes": f.stat().st_size}
    manifest = {
        "command": command,
        "scenario_name": scenario.name,
        "scenario": scenario.raw,
        "seed": seed,
        "steps": steps,
        "backend": kernels.backend_name(),
        "version": __version__,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _emit_run(out: Path, scenario, result, params):
    result.write_trajectory_csv(out / "trajectory.csv")
    result.write_exits_csv(out / "exits.csv")
    result.write_series_csv(out / "series.csv")
    congestion_metrics(result, scenario.env, params).write_csv(out / "congestion.csv")
    for step, values in sorted(result.densities.items()):
        write_density_grid(out / f"density_{step}.grid", scenario.default_grid(), values)


def _cmd_run(args, scale: str) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = scenario.run.seed if args.seed is None else args.seed
    steps = scenario.run.steps if args.steps is None else args.steps
    t0 = time.perf_counter()
    kwargs = {}
    if scale == "meso":
        kwargs["batch"] = getattr(args, "batch", None)
        kwargs["density_grid"] = scenario.default_grid() \
            if scenario.run.density_stride > 0 else None
    result = scenario.run_once(scale=scale, seed=seed, steps=steps, **kwargs)
    _emit_run(out, scenario, result, scenario.params)
    wall = time.perf_counter() - t0
    _write_manifest(out, f"run-{scale}", scenario, seed, steps,
                    extra={"wall_clock_s": wall})
    evac = result.evacuated_fraction()
    print(f"{scenario.name} [{scale}] steps={len(result.times) - 1} "
          f"evacuated={evac:.3f}"
          + (f" evac_step={result.evac_step}" if result.evac_step is not None else "")
          + f" wall={wall:.1f}s")
    return 0


def _cmd_optimize(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = scenario.run.seed if args.seed is None else args.seed
    steps = scenario.run.steps if args.steps is None else args.steps
    config = CompassConfig(j_max=args.iters, seed=seed)
    objective = scenario.objective_spec(steps)
    t0 = time.perf_counter()
    trace = compass_search(scenario, None, objective, config, scale=args.scale,
                           steps=steps)
    # final run under the best schedule, with full recording
    from .optimize import _eval_seed
    result = scenario.run_once(scale=args.scale, seed=_eval_seed(config, 0),
                               schedule=trace.best_schedule, steps=steps,
                               batch=getattr(args, "batch", None))
    _emit_run(out, scenario, result, scenario.params)
    trace.write_csv(out / "trace.csv")
    write_schedule(out / "schedule.txt", trace.best_schedule)
    wall = time.perf_counter() - t0
    _write_manifest(out, "optimize", scenario, seed, steps,
                    extra={"wall_clock_s": wall, "iters": args.iters,
                           "scale": args.scale,
                           "initial_cost": trace.initial_cost,
                           "best_cost": trace.best_cost})
    print(f"{scenario.name} [optimize/{args.scale}] iters={args.iters} "
          f"cost {fmt(trace.initial_cost)} -> {fmt(trace.best_cost)} "
          f"wall={wall:.1f}s")
    return 0


def _cmd_metrics(args) -> int:
    out = Path(args.out)
    series = out / "series.csv"
    manifest = out / "manifest.json"
    if not series.exists() or not manifest.exists():
        raise ScenarioError(f"{out} does not look like a finished run "
                            "(need series.csv and manifest.json)")
    meta = json.loads(manifest.read_text())
    scale = "meso" if meta["command"].endswith("meso") else "micro"
    rows = series.read_text().strip().split("\n")
    header = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    cols = {name: i for i, name in enumerate(header)}
    ne = sum(1 for name in header if name.startswith("occ_count_"))
    times = data[:, cols["time"]]
    occ_c = data[:, [cols[f"occ_count_{e + 1}"] for e in range(ne)]]
    occ_m = data[:, [cols[f"occ_mass_{e + 1}"] for e in range(ne)]]
    sq_c = data[:, [cols[f"sqdev_count_{e + 1}"] for e in range(ne)]]
    sq_m = data[:, [cols[f"sqdev_mass_{e + 1}"] for e in range(ne)]]
    total0 = data[0, cols["active_mass"]] + sum(
        data[0, cols[f"evac_mass_{e + 1}"]] for e in range(ne))
    cong = sq_c if scale == "micro" else sq_m
    occupied = (occ_c if scale == "micro" else occ_m) > 0
    report = CongestionReport(
        scale=scale, times=times, cong=cong, peak=cong.max(axis=0),
        m_count=occ_c.max(axis=0), l_frac=occupied.mean(axis=0),
        m_mass=(occ_m / total0).max(axis=0))
    report.write_csv(out / "congestion.csv")
    print(f"congestion table written to {out / 'congestion.csv'}")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"OK {scenario.name}: {scenario.follower_count} followers, "
          f"{scenario.n_leaders} leaders, {len(scenario.env.exits)} exits, "
          f"{len(scenario.env.walls)} walls")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run-micro":
            return _cmd_run(args, "micro")
        if args.command == "run-meso":
            return _cmd_run(args, "meso")
        if args.command == "optimize":
            return _cmd_optimize(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
        if args.command == "validate":
            return _cmd_validate(args)
    except (ScenarioError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
