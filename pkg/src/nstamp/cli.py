"""Command-line entry point: ``nstamp run|plan|replay|metrics``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .executive import MalformedTrace, read_trace, validate_trace
from .harness import ConfigError, ExperimentConfig, metrics_from_traces, results_csv, run_experiment
from .pddl import PDDLError, load_disassembly_domain, parse_domain, parse_problem, plan


def _cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = Path(args.out or config.output_dir)
    results = run_experiment(config, out)
    sys.stdout.write(results_csv(results))
    return 0


def _cmd_plan(args) -> int:
    domain = parse_domain(Path(args.domain).read_text(encoding="utf-8"))
    problem = parse_problem(Path(args.problem).read_text(encoding="utf-8"), domain)
    steps = plan(problem.init, problem.goal, domain.actions)
    if steps is None:
        print("NoPlan")
        return 1
    for step in steps:
        print(step)
    return 0


def _cmd_replay(args) -> int:
    domain = (parse_domain(Path(args.domain).read_text(encoding="utf-8"))
              if args.domain else load_disassembly_domain())
    trace = read_trace(Path(args.trace))
    problems = validate_trace(trace, domain)
    for p in problems:
        print(p)
    if problems:
        return 1
    print(f"ok: {len(trace.steps)} steps, n={trace.replan_count}, {trace.outcome}")
    return 0


def _cmd_metrics(args) -> int:
    sys.stdout.write(results_csv(metrics_from_traces(Path(args.traces))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nstamp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded experiment")
    p.add_argument("--config", required=True, help="JSON config file, or 'default'")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plan", help="print a shortest plan")
    p.add_argument("--domain", required=True)
    p.add_argument("--problem", required=True)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("replay", help="re-validate a logged trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--domain", default=None, help="domain file (default: bundled)")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("metrics", help="recompute metrics from trace logs")
    p.add_argument("--traces", required=True)
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PDDLError, MalformedTrace, OSError, ValueError) as exc:
        print(f"nstamp {args.command}: {exc}", file=sys.stderr)
        return 2
