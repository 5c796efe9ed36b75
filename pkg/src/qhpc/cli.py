"""``qhpc`` command line.

    qhpc validate <workflow> <fabric>
    qhpc run <workflow> <fabric> [--binding early|late] [--seed N] [--mode exact|sampled]
             [--trace PATH] [--metrics PATH] [--results PATH] ...
    qhpc report <trace> [--gantt PATH]
    qhpc examples <dir>

Exit codes: 0 success, 1 invalid input or I/O error, 2 unsatisfiable
placement, 3 runtime failure after retries.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from typing import List, Optional, Sequence, Tuple

from .actions import ACTIONS, DRIVER_ACTIONS
from .fabric import Fabric, FabricError, load_fabric
from .runtime import RunConfig, execute
from .taskmgr import RetryPolicy
from .trace import TraceError, format_report, read_trace, write_gantt, write_trace
from .workflow import Workload, WorkflowError, compile, parse_workflow
from .workload import capable

EXIT_OK, EXIT_INVALID, EXIT_UNSAT, EXIT_FAILED = 0, 1, 2, 3
DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


class _Invalid(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load(workflow_path: str, fabric_path: str) -> Tuple[Workload, Fabric]:
    problems: List[str] = []
    wl = fabric = None
    try:
        wl = compile(parse_workflow(workflow_path))
    except WorkflowError as e:
        if e.cycle:
            problems.append(f"{workflow_path}: cycle among tasks: {', '.join(e.cycle)}")
        problems += [f"{workflow_path}: {d}" for d in e.diagnostics]
    except OSError as e:
        problems.append(f"{workflow_path}: {e.strerror}")
    try:
        fabric = load_fabric(fabric_path)
    except FabricError as e:
        problems += [f"{fabric_path}: {d}" for d in e.diagnostics]
    except OSError as e:
        problems.append(f"{fabric_path}: {e.strerror}")
    if wl is not None:
        for t in wl.tasks:
            if t.kind == "classical" and t.action not in ACTIONS and t.action not in DRIVER_ACTIONS:
                problems.append(f"{workflow_path}: task {t.id!r}: unknown action {t.action!r}")
    if problems:
        raise _Invalid("\n".join(problems))
    return wl, fabric


def cmd_validate(workflow_path: str, fabric_path: str) -> int:
    try:
        wl, fabric = _load(workflow_path, fabric_path)
    except _Invalid as e:
        _err(str(e))
        return EXIT_INVALID
    for t in wl.tasks:
        if not any(capable(t, r) for r in fabric.nodes + fabric.qpus):
            print(f"warning: no resource in {fabric_path} can host task {t.id!r}", file=sys.stderr)
    print(f"OK: {len(wl.tasks)} tasks, {len(wl.edges)} edges, {len(wl.constraints)} placement constraints; "
          f"{len(fabric.nodes)} nodes, {len(fabric.qpus)} qpus")
    return EXIT_OK


def _parse_reserve(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        rid, sep, us = item.rpartition(":")
        if not sep or not rid or not us.isdigit():
            raise _Invalid(f"--reserve expects RESOURCE:MICROSECONDS, got {item!r}")
        out[rid] = int(us)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    fabric_path = args.fabric_opt or args.fabric
    if fabric_path is None:
        _err("a fabric file is required (positional or --fabric)")
        return EXIT_INVALID
    try:
        wl, fabric = _load(args.workflow, fabric_path)
        background = _parse_reserve(args.reserve)
        for rid in background:
            if rid not in fabric.resource_ids:
                raise _Invalid(f"--reserve names unknown resource {rid!r}")
        cfg = RunConfig(
            binding=args.binding, seed=args.seed, mode=args.mode,
            retry=RetryPolicy(args.max_retries, args.backoff_us),
            pilot_duration_us=args.pilot_duration_us, background=background,
        )
    except (_Invalid, ValueError) as e:
        _err(str(e))
        return EXIT_INVALID
    result = execute(wl, fabric, cfg)
    try:
        write_trace(args.trace, result.records)
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(result.metrics.dumps())
        if args.results:
            with open(args.results, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(result.outputs, fh, indent=2, sort_keys=True)
                fh.write("\n")
        for path, text in result.artifacts:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
    except OSError as e:
        _err(f"cannot write output: {e}")
        return EXIT_INVALID
    m = result.metrics
    print(f"outcome={m.outcome} makespan_us={m.makespan_us} quantum_tasks={m.total_quantum_tasks} "
          f"shots={m.total_shots}")
    if result.message:
        print(result.message, file=sys.stderr)
    return result.exit_code


def cmd_report(trace_path: str, gantt: Optional[str]) -> int:
    try:
        records = read_trace(trace_path)
    except TraceError as e:
        _err(f"{trace_path}: {e}")
        return EXIT_INVALID
    except OSError as e:
        _err(f"{trace_path}: {e.strerror}")
        return EXIT_INVALID
    sys.stdout.write(format_report(records))
    if gantt:
        try:
            write_gantt(gantt, records)
        except OSError as e:
            _err(f"{gantt}: {e.strerror}")
            return EXIT_INVALID
    return EXIT_OK


def cmd_examples(dest: str) -> int:
    os.makedirs(dest, exist_ok=True)
    for name in sorted(os.listdir(DATA_DIR)):
        shutil.copy(os.path.join(DATA_DIR, name), os.path.join(dest, name))
        print(os.path.join(dest, name))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qhpc", description="Hybrid quantum-HPC workflow simulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a workflow and a fabric file")
    v.add_argument("workflow")
    v.add_argument("fabric")

    r = sub.add_parser("run", help="execute a workflow on a simulated fabric")
    r.add_argument("workflow")
    r.add_argument("fabric", nargs="?")
    r.add_argument("--fabric", dest="fabric_opt", metavar="PATH", help="fabric file (alternative to the positional)")
    r.add_argument("--binding", choices=("early", "late"), default="early")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=("exact", "sampled"), default=None,
                   help="override the evaluation mode of every VQE task")
    r.add_argument("--trace", default="trace.ndjson")
    r.add_argument("--metrics", default="metrics.json")
    r.add_argument("--results", default=None, help="write task outputs as JSON")
    r.add_argument("--max-retries", type=int, default=2)
    r.add_argument("--backoff-us", type=int, default=0)
    r.add_argument("--pilot-duration-us", type=int, default=RunConfig().pilot_duration_us)
    r.add_argument("--reserve", action="append", default=[], metavar="RES:US",
                   help="treat RES as busy with outside work until US (repeatable)")

    rep = sub.add_parser("report", help="summarise a trace file")
    rep.add_argument("trace")
    rep.add_argument("--gantt", default=None, help="write task,resource,start,end rows (TSV)")

    ex = sub.add_parser("examples", help="copy the bundled example workflows and fabrics")
    ex.add_argument("dest")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.workflow, args.fabric)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "report":
        return cmd_report(args.trace, args.gantt)
    return cmd_examples(args.dest)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
