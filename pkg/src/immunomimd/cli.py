"""Command-line front end.

Exit codes: 0 success, 1 bad input or netlist mismatch, 2 step cap exceeded.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path

from .agents import DEFAULT_MAX_STEPS, Simulation
from .bench import (
    DEFAULT_AGENT_COUNTS,
    CapExceeded,
    RunRecord,
    emit_speedup_csv,
    emit_trace_csv,
    speedup_experiment,
)
from .layout import LayoutError, LayoutRuleError, parse_layout
from .netlist import format_netlist
from .oracle import IntegrityError, canonicalize_run, format_canonical, netlists_equal, oracle_extract

EXIT_OK, EXIT_INPUT, EXIT_CAP = 0, 1, 2
FIXTURES = ("empty", "single_wire", "cross", "inverter", "nand4")


class InputError(Exception):
    pass


def load_layout(source: str):
    """Parse a layout file; a bare fixture name (e.g. ``nand4``) loads the bundled copy."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    elif source in FIXTURES:
        text = resources.files("immunomimd.fixtures").joinpath(f"{source}.lay").read_text(encoding="utf-8")
    else:
        raise InputError(f"no such layout file: {source}")
    return parse_layout(text), path.stem


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _simulate(args, corrupt=False) -> Simulation:
    grid, _ = load_layout(args.layout)
    sim = Simulation(grid, args.agents, args.seed, corrupt=corrupt)
    sim.run(args.max_steps)
    return sim


def _cap_message(args) -> str:
    return f"{args.layout}: N={args.agents} seed={args.seed} did not finish within {args.max_steps} steps"


def cmd_extract(args) -> int:
    sim = _simulate(args)
    name = Path(args.layout).stem
    net_path = args.out or f"{name}.net"
    trace_path = args.trace or str(Path(net_path).with_suffix(".csv"))
    _write(net_path, format_netlist(sim.env.emitted))
    record = RunRecord(name, args.agents, args.seed, args.max_steps, sim.completion_step, sim.trace)
    _write(trace_path, emit_trace_csv(record))
    if not sim.done:
        print(_cap_message(args), file=sys.stderr)
        return EXIT_CAP
    print(f"completed at step {sim.completion_step}: {len(sim.env.emitted)} statements -> {net_path}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    grid, _ = load_layout(args.layout)
    _write(args.out, format_canonical(oracle_extract(grid)))
    return EXIT_OK


def cmd_compare(args) -> int:
    sim = _simulate(args, corrupt=args.corrupt_contacts)
    if not sim.done:
        print(_cap_message(args), file=sys.stderr)
        return EXIT_CAP
    equal, diff = netlists_equal(canonicalize_run(sim.env), oracle_extract(sim.env.grid))
    if not equal:
        print("agent netlist differs from the oracle (first = agents, second = oracle):")
        for line in diff:
            print("  " + line)
        return EXIT_INPUT
    print(f"match: completed at step {sim.completion_step}")
    return EXIT_OK


def _agent_counts(text: str) -> list[int]:
    try:
        ns = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not ns or min(ns) < 1:
        raise argparse.ArgumentTypeError("agent counts must be positive")
    return ns


def cmd_bench(args) -> int:
    grid, name = load_layout(args.layout)
    try:
        table = speedup_experiment(
            grid, args.agent_counts, args.repeats, args.seed, args.max_steps, layout=name, workers=args.workers
        )
    except CapExceeded as exc:
        print(f"fit aborted: {exc}", file=sys.stderr)
        return EXIT_CAP
    _write(args.out, emit_speedup_csv(table))
    seeds = f"{table.seed0}..{table.seed0 + table.repeats - 1}"
    print(f"slope {table.slope:.4f} intercept {table.intercept:.4f} (seeds {seeds})")
    return EXIT_OK


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are input errors; 2 is reserved for the step cap
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="immunomimd", description="Multi-agent netlist extraction with immune-style load balancing."
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, agents=True):
        p.add_argument(
            "--layout", required=True, help="layout file, or a bundled fixture name (%s)" % ", ".join(FIXTURES)
        )
        p.add_argument("--seed", type=int, default=1, help="RNG seed (first seed for bench; default 1)")
        p.add_argument("--max-steps", type=_positive, default=DEFAULT_MAX_STEPS, help="step cap (default 50000)")
        if agents:
            p.add_argument("--agents", type=_positive, default=175, help="number of agents (default 175)")

    p = sub.add_parser("extract", help="run the agents, write the .net statements and the population trace")
    common(p)
    p.add_argument("--out", help="statement file (default <layout>.net)")
    p.add_argument("--trace", help="population trace CSV (default: --out with a .csv suffix)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("oracle", help="write the reference canonical netlist")
    p.add_argument("--layout", required=True, help="layout file or bundled fixture name")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="run the agents and check the result against the oracle")
    common(p)
    p.add_argument("--corrupt-contacts", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="completion time over agent counts and seeds, with the log-log slope")
    common(p, agents=False)
    p.add_argument(
        "--agent-counts",
        type=_agent_counts,
        default=list(DEFAULT_AGENT_COUNTS),
        help="comma-separated agent counts (default %s)" % ",".join(map(str, DEFAULT_AGENT_COUNTS)),
    )
    p.add_argument("--repeats", type=int, default=20, help="seeds per agent count, at least 2 (default 20)")
    p.add_argument("--workers", type=int, default=os.cpu_count(), help="worker processes (default: all CPUs)")
    p.add_argument("--out", help="speedup CSV (default stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "repeats", 2) < 2:
        parser.error("--repeats must be at least 2")
    try:
        return args.func(args)
    except (InputError, LayoutError, LayoutRuleError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
