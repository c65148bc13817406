"""Command-line front end: case inspection, cascade simulation, identification.

Exit codes: 0 ok, 2 input error, 3 solver error, 4 identification did not
converge (artifacts are still written).  All outputs are deterministic:
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade_sim import (
    CascadeReport,
    CascadeStepError,
    ControlSchedule,
    TripConfig,
    simulate,
)
from .dc_powerflow import DEFAULT_LIVE_THRESHOLD, SingularIslandError, find_islands, solve_flow
from .grid_model import CaseError, Network, parse_case, selection
from .worst_case_id import IdentificationConfig, SingularNewtonError, identify

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_NO_CONVERGENCE = 4

OUTPUT_FORMATS = ("json", "csv")


@dataclass(frozen=True)
class RunManifest:
    """Resolved invocation: case path, subcommand, configs, output target."""

    case_path: Path
    subcommand: str
    trip_config: TripConfig
    identification: IdentificationConfig | None
    output: Path | None
    output_format: str

    def __post_init__(self):
        if not self.case_path.is_file():
            raise FileNotFoundError(f"case file not found: {self.case_path}")
        if self.output_format not in OUTPUT_FORMATS:
            raise ValueError(f"format must be one of {OUTPUT_FORMATS}")


class _InputError(Exception):
    pass


def _load_network(path_str: str) -> Network:
    path = Path(path_str)
    if not path.is_file():
        raise _InputError(f"case file not found: {path}")
    return parse_case(path.read_text())


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dump_report(report: CascadeReport, path: Path, fmt: str) -> None:
    if fmt == "json":
        _dump_json(report.to_dict(), path)
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "branch_id", "flow", "y_p", "tripped"])
        for rec in report.steps:
            for r in range(len(rec.flows)):
                writer.writerow(
                    [rec.k, r + 1, repr(float(rec.flows[r])), repr(float(rec.y_p[r])),
                     int(r + 1 in rec.tripped)]
                )


def _parse_schedule_file(path_str: str, net: Network) -> ControlSchedule:
    path = Path(path_str)
    if not path.is_file():
        raise _InputError(f"schedule file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise _InputError(f"invalid schedule JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"selected_buses", "controls"}:
        raise _InputError(
            "schedule file must be an object with keys 'selected_buses' and 'controls'"
        )
    bus_ids = doc["selected_buses"]
    values = np.asarray(doc["controls"], dtype=float)
    if values.ndim != 2 or values.shape[1] != len(bus_ids):
        raise _InputError(
            "schedule 'controls' must be a (steps x selected buses) array"
        )
    return ControlSchedule.on_buses(net, bus_ids, values)


def cmd_inspect(args: argparse.Namespace) -> int:
    net = _load_network(args.case)
    partition = find_islands(net, net.base_admittances, args.live_threshold)
    sol = solve_flow(net, net.base_admittances, net.injections, partition)
    print(f"{net.n_buses} buses, {net.n_branches} branches, "
          f"base flow max |P| = {np.max(np.abs(sol.flows)):.6f}")
    print(f"islands at base state: {partition.q}")
    print("branch  from  to    flow        threshold   margin")
    for r, br in enumerate(net.branches):
        flow = sol.flows[r]
        margin = net.thresholds[r] - abs(flow)
        print(f"{r + 1:>6}  {br.from_bus + 1:>4}  {br.to_bus + 1:>2}  "
              f"{flow:>10.6f}  {net.thresholds[r]:>9.4f}  {margin:>9.4f}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    net = _load_network(args.case)
    if args.zero:
        schedule = ControlSchedule.zeros(net, args.steps)
    elif args.schedule:
        schedule = _parse_schedule_file(args.schedule, net)
        if schedule.n_steps < args.steps:
            raise _InputError(
                f"schedule has {schedule.n_steps} steps, --steps asks for {args.steps}"
            )
    else:
        raise _InputError("provide a schedule file or --zero")
    cfg = TripConfig(sigma=args.sigma, mode=args.mode)
    report = simulate(
        net, schedule, args.steps, cfg,
        live_threshold=args.live_threshold, epsilon=args.epsilon,
    )
    _dump_report(report, Path(args.output), args.format)
    print(f"wrote {args.output}: {report.island_count} island(s), "
          f"cost J = {report.cost_j:.6f}")
    return EXIT_OK


def cmd_identify(args: argparse.Namespace) -> int:
    net = _load_network(args.case)
    bus_ids = args.select_bus
    if not bus_ids:
        raise _InputError("identification needs at least one --select-bus")
    lam = selection(net, bus_ids)
    cfg = IdentificationConfig(
        epsilon=args.epsilon,
        steps=args.steps,
        sigma=args.sigma,
        delta=args.delta,
        live_threshold=args.live_threshold,
        n_threads=args.threads,
    )
    solution = identify(net, lam, cfg)

    replay_schedule = ControlSchedule(controls=solution.controls, selection=lam)
    replay = simulate(
        net, replay_schedule, args.steps, TripConfig(sigma=args.sigma, mode="hard"),
        live_threshold=args.live_threshold, epsilon=args.epsilon,
    )
    _dump_json(solution.to_dict(), Path(args.output))
    _dump_report(replay, Path(args.replay_output), args.format)
    selected = ", ".join(str(b) for b in bus_ids)
    print(f"identified controls on bus(es) {selected}: "
          + "; ".join(
              f"step {k}: " + ", ".join(f"{solution.controls[k][b - 1]:+.4f}" for b in bus_ids)
              for k in range(args.steps)
          ))
    print(f"converged = {solution.converged}, residual norm = {solution.residual_norm:.3e}, "
          f"cost = {solution.cost:.6f}")
    print(f"hard-mode replay: {replay.island_count} island(s); wrote {args.output} "
          f"and {args.replay_output}")
    return EXIT_OK if solution.converged else EXIT_NO_CONVERGENCE


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcascade",
        description="Cascading-outage simulation and worst-case fluctuation "
                    "identification on DC networks",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("case", help="path to a JSON case file")
        p.add_argument("--live-threshold", type=float, default=DEFAULT_LIVE_THRESHOLD,
                       help="fraction of base admittance below which a branch is dead")

    p_inspect = sub.add_parser("inspect", help="print case summary and base-flow margins")
    add_common(p_inspect)
    p_inspect.set_defaults(fn=cmd_inspect)

    p_sim = sub.add_parser("simulate", help="run a cascade and write a report")
    add_common(p_sim)
    p_sim.add_argument("--schedule", help="JSON schedule file")
    p_sim.add_argument("--zero", action="store_true", help="use an all-zero schedule")
    p_sim.add_argument("--steps", type=int, default=4)
    p_sim.add_argument("--mode", choices=["smooth", "hard"], default="hard")
    p_sim.add_argument("--sigma", type=float, default=1.0)
    p_sim.add_argument("--epsilon", type=float, default=10.0)
    p_sim.add_argument("--output", default="cascade_report.json")
    p_sim.add_argument("--format", choices=list(OUTPUT_FORMATS), default="json")
    p_sim.set_defaults(fn=cmd_simulate)

    p_id = sub.add_parser(
        "identify",
        help="identify worst-case fluctuations and validate by hard-mode replay",
    )
    add_common(p_id)
    p_id.add_argument("--select-bus", type=int, action="append", default=[],
                      help="1-based bus id admitting fluctuations (repeatable)")
    p_id.add_argument("--epsilon", type=float, default=10.0)
    p_id.add_argument("--steps", type=int, default=4)
    p_id.add_argument("--sigma", type=float, default=1.0)
    p_id.add_argument("--delta", type=float, default=0.01)
    p_id.add_argument("--threads", type=int, default=1)
    p_id.add_argument("--output", default="identified_solution.json")
    p_id.add_argument("--replay-output", default="replay_report.json")
    p_id.add_argument("--format", choices=list(OUTPUT_FORMATS), default="json")
    p_id.set_defaults(fn=cmd_identify)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (_InputError, CaseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SingularIslandError, CascadeStepError, SingularNewtonError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
