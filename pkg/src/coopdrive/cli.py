"""Command-line front end: closed-loop runs, parameter sweeps, and the
exhaustive planning oracle.

Exit codes: 0 success, 1 bad usage or configuration, 2 a run aborted on a
safety violation, 3 the tree search disagreed with exhaustive enumeration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from math import factorial

from . import __version__
from .config import (ScenarioConfig, dump_scenario, load_scenario,
                     scenario_to_dict)
from .errors import ConfigError, CoopDriveError, OracleMismatchError, SafetyViolationError
from .interpreter import PlanningContext
from .mcts import SearchParams, plan
from .ordering import successors
from .road import allowed_actions
from .simulation import run, snapshot_vehicles, sweep

_USAGE_EXIT = 1
_SAFETY_EXIT = 2
_ORACLE_EXIT = 3
_LEAF_GUARD = 10 ** 6


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse defaults to exit 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(_USAGE_EXIT)


def _load(args: argparse.Namespace) -> ScenarioConfig:
    if args.scenario is None:
        return ScenarioConfig()
    return load_scenario(args.scenario)


def _stamp(out_dir: str, scenario: ScenarioConfig, extra: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    dump_scenario(scenario, os.path.join(out_dir, "scenario.yaml"))
    stamp = {"version": __version__, "argv": sys.argv[1:],
             "scenario": scenario_to_dict(scenario)}
    stamp.update(extra)
    with open(os.path.join(out_dir, "stamp.json"), "w", encoding="utf-8") as fh:
        json.dump(stamp, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_jsonl(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, default=str) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args)
    strategies = ["fifo", "bi_level"] if args.strategy == "both" else [args.strategy]
    _stamp(args.out, scenario,
           {"command": "run", "rate": args.rate, "duration": args.duration,
            "seeds": args.seeds})
    metric_rows: list[dict] = []
    trace_rows: list[dict] = []
    traj_path = os.path.join(args.out, "trajectories.csv")
    traj_fh = open(traj_path, "w", encoding="utf-8") if args.trajectories else None
    try:
        if traj_fh is not None:
            traj_fh.write("time,vehicle,lane,position,velocity,strategy,seed\n")
        for seed in args.seeds:
            for strategy in strategies:
                result = run(scenario, strategy, rate=args.rate,
                             duration=args.duration, seed=seed,
                             record_trajectories=args.trajectories)
                m = dataclasses.asdict(result.metrics)
                m["delays"] = {str(k): v for k, v in m["delays"].items()}
                metric_rows.append(m)
                for entry in result.plan_log:
                    trace_rows.append({"strategy": strategy, "seed": seed, **entry})
                if traj_fh is not None:
                    for t, vid, lane, pos, vel in result.trajectories:
                        traj_fh.write(f"{t:.2f},{vid},{lane},{pos:.3f},"
                                      f"{vel:.3f},{strategy},{seed}\n")
                mm = result.metrics
                print(f"{strategy:>8} seed={seed} rate={args.rate:.0f}: "
                      f"passed={mm.passed} avg_delay={mm.avg_delay:.3f}s "
                      f"violations={mm.cell_gap_violations + mm.spacing_violations}")
    finally:
        if traj_fh is not None:
            traj_fh.close()
    _write_jsonl(os.path.join(args.out, "metrics.jsonl"), metric_rows)
    _write_jsonl(os.path.join(args.out, "traces.jsonl"), trace_rows)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _load(args)
    axes: dict = {}
    if args.c is not None:
        axes["c"] = args.c
    if args.omega is not None:
        axes["omega"] = args.omega
    if args.budgets is not None:
        axes["budget"] = args.budgets
    if args.rates is not None:
        axes["rate"] = args.rates
    rows = sweep(scenario, axes, args.seeds, n_vehicles=args.n_vehicles,
                 duration=args.duration)
    _stamp(args.out, scenario,
           {"command": "sweep", "axes": axes, "seeds": args.seeds,
            "n_vehicles": args.n_vehicles})
    _write_jsonl(os.path.join(args.out, "sweep.jsonl"), rows)
    for row in rows:
        cell = " ".join(f"{k}={row[k]}" for k in ("c", "omega", "budget", "rate")
                        if k in row)
        print(f"{cell}: mean_improvement={row['mean_improvement']:.4f}")
    return 0


def _leaf_count(vehicles, grid) -> int:
    per_lane: dict[int, int] = {}
    two_way = 0
    for v in vehicles:
        per_lane[v.lane] = per_lane.get(v.lane, 0) + 1
        if len(allowed_actions(grid, v.lane)) == 2:
            two_way += 1
    n = len(vehicles)
    interleavings = factorial(n)
    for k in per_lane.values():
        interleavings //= factorial(k)
    return interleavings * (2 ** two_way)


def _enumerate_best(ctx: PlanningContext, vehicles, grid) -> float:
    """Depth-first walk of every completion; returns the best total delay.
    Extends states exactly like the tree search does, so equal orders give
    bit-identical objectives."""
    best = math.inf
    stack = [ctx.initial_state()]
    n = len(vehicles)
    while stack:
        state = stack.pop()
        if len(state.entries) == n:
            if state.total_delay < best:
                best = state.total_delay
            continue
        kids = successors(state.order(), vehicles, grid)
        # reversed keeps left-to-right discovery order on the stack
        for vid, action in reversed(kids):
            stack.append(state.extend(vid, action))
    return best


def cmd_oracle(args: argparse.Namespace) -> int:
    scenario = _load(args)
    grid = scenario.grid()
    pp = scenario.planner_params(grid)
    rows: list[dict] = []
    mismatches = 0
    for i in range(args.instances):
        vehicles = snapshot_vehicles(grid, scenario.limits, scenario.safety,
                                     args.vehicles, args.seed + i)
        leaves = _leaf_count(vehicles, grid)
        if leaves > _LEAF_GUARD:
            raise ConfigError(
                f"instance {i} has {leaves} leaf orders, over the "
                f"{_LEAF_GUARD} enumeration guard")
        ctx = PlanningContext(vehicles, grid, pp)
        j_exhaustive = _enumerate_best(ctx, vehicles, grid)
        search = dataclasses.replace(scenario.search,
                                     node_budget=10 * leaves + 10,
                                     time_budget=math.inf)
        res = plan(vehicles, grid, pp, search)
        match = (res.objective == j_exhaustive
                 or abs(res.objective - j_exhaustive) == 0.0)
        if not match:
            mismatches += 1
        rows.append({"instance": i, "seed": args.seed + i, "leaves": leaves,
                     "j_exhaustive": j_exhaustive, "j_search": res.objective,
                     "match": match})
    if args.out:
        _stamp(args.out, scenario,
               {"command": "oracle", "vehicles": args.vehicles,
                "instances": args.instances, "seed": args.seed})
        _write_jsonl(os.path.join(args.out, "oracle.jsonl"), rows)
    print(f"oracle: {args.instances - mismatches}/{args.instances} instances "
          f"matched exhaustive enumeration")
    if mismatches:
        raise OracleMismatchError(
            f"{mismatches} of {args.instances} instances diverged")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="coopdrive",
                     description="Cooperative work-zone driving experiments")
    parser.add_argument("--scenario", default=None,
                        help="scenario YAML (defaults built in)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="closed-loop simulation")
    p.add_argument("--strategy", choices=["fifo", "bi_level", "both"],
                   default="both")
    p.add_argument("--rate", type=float, default=1200.0, help="veh/h demand")
    p.add_argument("--duration", type=float, default=600.0, help="seconds")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", default="out")
    p.add_argument("--trajectories", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweeps")
    p.add_argument("--c", type=float, nargs="+", default=None)
    p.add_argument("--omega", type=float, nargs="+", default=None)
    p.add_argument("--budgets", type=int, nargs="+", default=None)
    p.add_argument("--rates", type=float, nargs="+", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    p.add_argument("--n-vehicles", type=int, default=10)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="search vs exhaustive enumeration")
    p.add_argument("--vehicles", type=int, default=5)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SafetyViolationError as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return _SAFETY_EXIT
    except OracleMismatchError as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return _ORACLE_EXIT
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except CoopDriveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
