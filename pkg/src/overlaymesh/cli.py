"""Command-line front end: capacity tables, gamma sweeps, fixture checks."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import rate_model as rm
from .scheduler import (Mode, NoFeasibleSchedule, SearchBounds, best_periodic_schedule,
                        capacity_report, format_schedule)
from .simulator import SimPolicy, run
from .topology import (Topology, TopologyError, TrafficSpec, chain_topology, node_label,
                       parse_topology, regular_topology, traffic_spec)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flags resolved into the objects a run needs."""

    topology: Topology
    label: str
    traffic: TrafficSpec
    gamma: float
    gamma_source: str
    params: rm.RateParams

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise UsageError(f"gamma must lie in (0, 1], got {self.gamma}")


def _parse_grid(text: str) -> List[float]:
    """``a,b,c`` or inclusive ``start:stop:step``."""
    if ":" in text:
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise UsageError(f"bad range {text!r}, expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise UsageError(f"bad range {text!r}")
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def _parse_ids(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad node list {text!r}") from None


def _topology(args):
    if args.chain is not None:
        return chain_topology(args.chain, args.interference_factor), f"chain {args.chain}"
    if args.regular is not None:
        try:
            branches, depth = (int(x) for x in args.regular.lower().split("x"))
        except ValueError:
            raise UsageError(f"--regular expects BRANCHESxDEPTH, got {args.regular!r}") from None
        return (regular_topology(branches, depth, args.interference_factor),
                f"regular {branches}x{depth}")
    with open(args.file, encoding="utf-8") as fh:
        return parse_topology(fh.read(), args.interference_factor), f"file {Path(args.file).name}"


def resolve_config(args) -> RunConfig:
    topo, label = _topology(args)
    traffic = traffic_spec(topo, _parse_ids(args.sources))
    params = rm.RateParams(args.pp, args.ps, args.a)
    if args.gamma is not None:
        gamma, source = args.gamma, "pinned"
    else:
        gamma = rm.balance_alpha(params).gamma
        source = f"P_P={args.pp:g} P_S={args.ps:g} a={args.a:g}"
    return RunConfig(topo, label, traffic, gamma, source, params)


def _add_topology_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--chain", type=int, metavar="N", help="chain of N nodes")
    src.add_argument("--regular", metavar="BxD", help="regular topology, e.g. 2x5")
    src.add_argument("--file", metavar="PATH", help="topology file")
    p.add_argument("--interference-factor", type=float, default=3.0)
    p.add_argument("--sources", required=True, help="comma-separated source ids")


def _add_rate_args(p):
    p.add_argument("--gamma", type=float, help="pin the rate factor instead of computing it")
    p.add_argument("--pp", type=float, default=10.0, help="primary SNR (linear)")
    p.add_argument("--ps", type=float, default=10.0, help="secondary SNR (linear)")
    p.add_argument("--a", type=float, default=0.2, help="cross gain")


def _fmt_ratio(r):
    return f"{r.numerator}/{r.denominator}"


def cmd_capacity(args, out) -> int:
    cfg = resolve_config(args)
    topo, label, traffic, gamma = cfg.topology, cfg.label, cfg.traffic, cfg.gamma
    bounds = SearchBounds(args.t_max, args.k_max, args.inflight_max)
    base = best_periodic_schedule(topo, traffic, Mode.BASELINE, bounds)
    over = best_periodic_schedule(topo, traffic, Mode.OVERLAY, bounds)
    rep = capacity_report(base, over, gamma, args.accounting)
    unit = rm.point_to_point_rate(cfg.params.p_primary) if args.bits_per_use else 1.0
    unit_name = "bits/use" if args.bits_per_use else "B"

    greedy = {}
    if args.engine in ("greedy", "both"):
        for mode in Mode:
            sim = run(topo, traffic, SimPolicy(mode), args.slots, args.warmup, gamma)
            greedy[mode] = sim
    problems = []
    if args.engine == "both":
        slack = 1.0 / (args.slots - args.warmup)
        for mode, exact in ((Mode.BASELINE, base), (Mode.OVERLAY, over)):
            if greedy[mode].min_packets_per_slot > float(exact.ratio) + slack:
                got = greedy[mode].min_packets_per_slot
                problems.append(f"greedy {mode.value} beats exact: "
                                f"{got:.6f} > {float(exact.ratio):.6f}")

    sources = ",".join(node_label(s) for s in traffic.sources)
    if args.format == "csv":
        out.write("topology,sources,mode,engine,deliveries_per_period,period,"
                  f"capacity_over_{'bits' if args.bits_per_use else 'B'},gamma,improvement_pct\n")
        if args.engine in ("exact", "both"):
            out.write(f"{label},{sources},baseline,exact,{base.deliveries_per_period},"
                      f"{base.period},{rep.baseline_float * unit:.6f},{gamma:.6f},0.000\n")
            out.write(f"{label},{sources},overlay,exact,{rep.overlay.deliveries_per_period},"
                      f"{rep.overlay.period},{rep.overlay_capacity * unit:.6f},{gamma:.6f},"
                      f"{100 * rep.improvement:.3f}\n")
        for mode, sim in greedy.items():
            out.write(f"{label},{sources},{mode.value},greedy,,,"
                      f"{min(sim.effective_rate(s) for s in traffic.sources) * unit:.6f},"
                      f"{gamma:.6f},\n")
    else:
        out.write(f"topology: {label} (interference factor {topo.interference_factor:g})\n")
        out.write(f"sources: {sources}\n")
        out.write(f"gamma: {gamma:.6f} ({cfg.gamma_source})\n")
        if args.accounting != "period":
            out.write(f"accounting: {args.accounting}\n")
        if args.bits_per_use:
            out.write(f"B: {unit:.6f} bits/use\n")
        if args.engine in ("exact", "both"):
            out.write(f"baseline: k/T = {_fmt_ratio(base.ratio)}  "
                      f"capacity = {rep.baseline_float * unit:.4f} {unit_name}\n")
            note = "" if rep.overlay_mode_used else "  (no cognitive slot pays off, baseline kept)"
            out.write(f"overlay:  k/T = {_fmt_ratio(rep.overlay.ratio)}  "
                      f"capacity = {rep.overlay_capacity * unit:.4f} {unit_name}{note}\n")
            out.write(f"improvement: {100 * rep.improvement:.1f}%\n")
        for mode, sim in greedy.items():
            out.write(f"greedy {mode.value}: {sim.min_packets_per_slot:.4f} packets/slot, "
                      f"capacity = {min(sim.effective_rate(s) for s in traffic.sources) * unit:.4f}"
                      f" {unit_name}\n")
    if args.dump_schedule:
        with open(args.dump_schedule, "w", encoding="utf-8") as fh:
            fh.write(format_schedule(base))
            fh.write(format_schedule(over))
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    return EXIT_FAIL if problems else EXIT_OK


def cmd_gamma(args, out) -> int:
    a_grid = _parse_grid(args.a)
    powers = _parse_grid(args.power)
    for a in a_grid:
        if not 0 <= a <= 1:
            raise UsageError(f"cross gain {a} outside [0, 1]")
    for p in powers:
        if p <= 0:
            raise UsageError(f"power {p} must be positive")
    rows = rm.gamma_sweep(a_grid, powers)
    out.write(rm.format_sweep_csv(rows))
    for r in rows:
        if abs(r.a - 0.2) < 1e-12 and abs(r.power - 10) < 1e-12:
            print(f"gamma(a=0.2, P=10) = {r.gamma:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, out) -> int:
    try:
        with open(args.path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        topo = parse_topology(text, args.interference_factor)
    except TopologyError as exc:
        for line, msg in exc.violations:
            where = f"{args.path}:{line}" if line is not None else args.path
            out.write(f"{where}: {msg}\n")
        return EXIT_FAIL
    out.write(f"{args.path}: ok ({len(topo.nodes)} nodes, "
              f"{sum(len(v) for v in topo.adjacency.values()) // 2} links)\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    cfg = resolve_config(args)
    modes = list(Mode) if args.mode == "both" else [Mode(args.mode)]
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        out.write("source,mode,packets_per_slot,effective_rate_over_B\n")
        for mode in modes:
            rep = run(cfg.topology, cfg.traffic, SimPolicy(mode, args.seed), args.slots,
                      args.warmup, cfg.gamma, trace)
            out.write(rep.to_csv().split("\n", 1)[1])
    finally:
        if trace:
            trace.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlaymesh",
        description="Capacity of wireless mesh networks with overlay cognitive radio.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="baseline vs overlay steady-state capacity")
    _add_topology_args(p)
    _add_rate_args(p)
    p.add_argument("--engine", choices=("exact", "greedy", "both"), default="exact")
    p.add_argument("--t-max", type=int, default=SearchBounds.t_max)
    p.add_argument("--k-max", type=int, default=SearchBounds.k_max)
    p.add_argument("--inflight-max", type=int, default=SearchBounds.inflight_max)
    p.add_argument("--accounting", choices=("period", "slot"), default="period",
                   help="apply gamma to whole periods or only cognitive slots")
    p.add_argument("--slots", type=int, default=10050, help="greedy run length")
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--bits-per-use", action="store_true",
                   help="report capacities in bits per channel use instead of B")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--dump-schedule", metavar="PATH")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("gamma", help="rate factor sweep as CSV")
    p.add_argument("--a", required=True, help="gains: list or start:stop:step")
    p.add_argument("--power", required=True, help="P_P = P_S values: list or range")
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("validate", help="check a topology file")
    p.add_argument("path")
    p.add_argument("--interference-factor", type=float, default=3.0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="greedy slot simulation")
    _add_topology_args(p)
    _add_rate_args(p)
    p.add_argument("--mode", choices=("baseline", "overlay", "both"), default="both")
    p.add_argument("--slots", type=int, default=10050)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", metavar="PATH", help="write every slot to PATH")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TopologyError, NoFeasibleSchedule, rm.RateDomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
