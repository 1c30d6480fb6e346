"""Command-line entry point: ``quadsafe run | benchmark | verify | export-traj``.

Exit codes:
    0  success
    1  configuration error (the message names the offending key)
    2  collision
    3  planning failure
    4  a verification property failed
    5  episode timed out before reaching the goal
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    Scenario,
    build_frs,
    build_map,
    build_params,
    build_weights,
    load_scenario,
    resolve_scenario,
)

EXIT_OK, EXIT_CONFIG, EXIT_COLLISION, EXIT_PLANNING, EXIT_VERIFY, EXIT_TIMEOUT = 0, 1, 2, 3, 4, 5
OUTCOME_CODES = {"success": EXIT_OK, "collision": EXIT_COLLISION, "planning_failure": EXIT_PLANNING,
                 "timeout": EXIT_TIMEOUT}
OUT_ENV = "QUADSAFE_OUT"


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "quadsafe_out"))


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _load(path) -> Scenario:
    return load_scenario(resolve_scenario(path))


def cmd_run(args) -> int:
    from .sim import run_episode

    scenario = _load(args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else default_out_root() / scenario.name / f"seed_{seed:04d}"
    _, m = run_episode(scenario, seed=seed, out_dir=out, frs=args.frs, observer=args.observer)
    print(f"{scenario.name} seed={seed}: {m.outcome}  rmse={m.tracking_rmse:.4f} m  "
          f"min_clearance={m.min_clearance:.3f} m  replans={m.replan_count}  -> {out}")
    return OUTCOME_CODES.get(m.outcome, EXIT_TIMEOUT)


def cmd_benchmark(args) -> int:
    from .sim import load_suite, run_benchmark

    suite = load_suite(args.suite)
    out = Path(args.out) if args.out else default_out_root() / f"benchmark_{suite.name}"

    def progress(r):
        if args.verbose:
            print(f"  {r.condition:<10} frs={int(r.frs)} obs={int(r.observer)} seed={r.seed:<4} {r.outcome}")

    summary = run_benchmark(suite, trials=args.trials, out_dir=out, workers=args.workers,
                            keep_logs=args.keep_logs, progress=progress)
    sys.stdout.write(summary.to_csv())
    print(f"-> {out / 'summary.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    results = verify.run(args.which)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        first = failed[0]
        print(f"first failure: {first.name}", file=sys.stderr)
        print(first.to_json(), file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_export_traj(args) -> int:
    """Plan once from the mission start (or take the fixed reference) and dump samples as CSV."""
    from .minco import Boundary
    from .planner import Planner
    from .reach import DisturbanceEstimate
    from .sim import reference_trajectory

    scenario = _load(args.scenario)
    if scenario.tracking_only:
        traj = reference_trajectory(scenario)
        radii = None
    else:
        params = build_params(scenario)
        weights = build_weights(scenario)
        _, esdf = build_map(scenario)
        use_frs = scenario.sim.frs if args.frs is None else args.frs
        planner = Planner(params, weights, build_frs(scenario), use_frs=use_frs)
        force = np.asarray(scenario.wind.mean) * scenario.wind.coefficient
        spread = np.full(3, np.sqrt(scenario.wind.variance) * scenario.wind.coefficient) * (np.any(force != 0))
        est = DisturbanceEstimate(force=force, spread=spread)
        res = planner.plan(esdf, Boundary.rest(scenario.mission.start, scenario.mission.goal), est)
        traj, radii = res.trajectory, res.frs
    t = np.arange(0.0, traj.duration + 1e-12, args.dt)
    pos, vel, acc = (traj.sample(t, d) for d in range(3))
    out = Path(args.out) if args.out else default_out_root() / scenario.name / "trajectory.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    header = "t,px,py,pz,vx,vy,vz,ax,ay,az" + (",d_q" if radii is not None else "")
    rows = [header]
    for i, ti in enumerate(t):
        vals = [ti, *pos[i], *vel[i], *acc[i]]
        if radii is not None:
            vals.append(radii.radius_at(int(np.floor(ti / scenario.planner.delta + 1e-9))))
        rows.append(",".join(f"{v:.6f}" for v in vals))
    out.write_text("\n".join(rows) + "\n")
    print(f"{len(t)} samples over {traj.duration:.3f} s -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadsafe", description="Reachability-aware quadrotor planning and tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one episode")
    r.add_argument("--scenario", required=True, help="scenario YAML (or bundled name, e.g. corridor)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<name>/seed_<n>)")
    r.add_argument("--frs", type=_on_off, metavar="on|off")
    r.add_argument("--observer", type=_on_off, metavar="on|off")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmark", help="run a suite of conditions x ablations x trials")
    b.add_argument("--suite", required=True, help="suite YAML (or bundled name, e.g. table1)")
    b.add_argument("--trials", type=int)
    b.add_argument("--out")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--keep-logs", action="store_true", help="also write every episode's logs")
    b.add_argument("-v", "--verbose", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--which", default="all", choices=["gradients", "frs", "observer", "all"])
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export-traj", help="write the planned (or reference) trajectory as CSV")
    e.add_argument("--scenario", required=True)
    e.add_argument("--out")
    e.add_argument("--dt", type=float, default=0.05)
    e.add_argument("--frs", type=_on_off, metavar="on|off")
    e.set_defaults(func=cmd_export_traj)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
