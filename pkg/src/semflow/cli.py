"""Command-line entry points.

  semflow run      run a workload under a policy mode, write the report
  semflow compare  ratio table for two run reports (same workload and seed)
  semflow trace    validate and summarize a scheduler or engine log
  semflow serve    start the HTTP service (wall-clock mode)

Exit codes: 0 success, 2 invalid spec or report mismatch, 3 failed assertion.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from typing import Dict, List, Optional

from .config import Config
from .errors import InvalidSpec, SemflowError, SpecMismatch
from .experiments import (
    POLICIES,
    compare_reports,
    format_comparison,
    format_report_summary,
    load_report,
    requests_csv,
    run_experiment,
    save_report,
)
from .workloads import generate_workload

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ASSERTION = 3

_SCHED_LINE = re.compile(
    r"^t=\d+(\.\d+)? place req=\S+ engine=\S+ "
    r"reason=(taskgroup|shared-queue|shared-ctx|solo)$"
)
_ENGINE_LINE = re.compile(r"^t=\d+(\.\d+)? engine=\S+ fill=\d+ batch=\d+ emitted=\d+$")


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if "," in text:
        try:
            return tuple(float(part) for part in text.split(","))
        except ValueError:
            pass
    return text


def _parse_params(pairs: List[str]) -> Dict[str, object]:
    params: Dict[str, object] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise InvalidSpec(f"--param expects key=value, got {pair!r}")
        params[key] = _coerce(value)
    return params


def _cmd_run(args: argparse.Namespace) -> int:
    config = Config.load(args.config) if args.config else Config()
    workload = generate_workload(args.workload, args.seed, **_parse_params(args.param))
    report = run_experiment(workload, args.mode, config)
    if args.out:
        save_report(report, args.out)
        base = args.out[:-5] if args.out.endswith(".json") else args.out
        with open(base + ".requests.csv", "w") as f:
            f.write(requests_csv(report))
        with open(base + ".sched.log", "w") as f:
            f.write("\n".join(report["scheduler_log"]) + "\n")
        with open(base + ".trace.log", "w") as f:
            for eid in sorted(report["engine_traces"]):
                f.write("\n".join(report["engine_traces"][eid]) + "\n")
        print(f"report written to {args.out}")
    print(format_report_summary(report))
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    cmp = compare_reports(load_report(args.a), load_report(args.b))
    print(format_comparison(cmp))
    if args.assert_ratio:
        metric, sep, minimum = args.assert_ratio.partition(":")
        if not sep:
            raise InvalidSpec("--assert-ratio expects METRIC:MIN")
        try:
            bound = float(minimum)
        except ValueError as exc:
            raise InvalidSpec(f"bad ratio bound {minimum!r}") from exc
        row = next((r for r in cmp["metrics"] if r["metric"] == metric), None)
        if row is None:
            raise InvalidSpec(f"unknown metric {metric!r}")
        ratio = row["ratio_a_over_b"]
        if ratio is None or ratio < bound:
            print(f"ASSERTION FAILED: {metric} a/b = {ratio} < {bound}", file=sys.stderr)
            return EXIT_ASSERTION
        print(f"assertion held: {metric} a/b = {ratio:.3f} >= {bound}")
    return EXIT_OK


def _cmd_trace(args: argparse.Namespace) -> int:
    kinds = {"sched": 0, "engine": 0}
    with open(args.log) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if _SCHED_LINE.match(line):
                kinds["sched"] += 1
            elif _ENGINE_LINE.match(line):
                kinds["engine"] += 1
            else:
                print(f"{args.log}:{lineno}: unrecognized line: {line}", file=sys.stderr)
                return EXIT_INVALID
    print(f"{kinds['sched']} scheduler lines, {kinds['engine']} engine lines, all well-formed")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app
    from .manager import SemanticManager

    config = Config.load(args.config) if args.config else Config()
    if args.time_scale is not None:
        config.time_scale = args.time_scale
    script_book: Optional[Dict[str, str]] = None
    if args.script_book:
        with open(args.script_book) as f:
            script_book = json.load(f)
        if not isinstance(script_book, dict):
            raise InvalidSpec("script book must be a JSON object of name -> text")
    manager = SemanticManager(config)
    manager.start_serving()
    app = create_app(manager, script_book)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        manager.stop_serving()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semflow")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a workload under a policy mode")
    run_p.add_argument("--workload", required=True)
    run_p.add_argument("--mode", default="semflow", help=f"one of {sorted(POLICIES)}")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--config", default=None)
    run_p.add_argument("--out", default=None, help="report JSON path (plus csv/log sidecars)")
    run_p.add_argument(
        "--param", action="append", default=[], metavar="K=V",
        help="workload parameter override, repeatable",
    )
    run_p.set_defaults(fn=_cmd_run)

    cmp_p = sub.add_parser("compare", help="compare two run reports")
    cmp_p.add_argument("--a", required=True)
    cmp_p.add_argument("--b", required=True)
    cmp_p.add_argument(
        "--assert-ratio", default=None, metavar="METRIC:MIN",
        help="exit 3 unless aggregate METRIC ratio a/b >= MIN",
    )
    cmp_p.set_defaults(fn=_cmd_compare)

    trace_p = sub.add_parser("trace", help="validate a scheduler or engine log")
    trace_p.add_argument("--log", required=True)
    trace_p.set_defaults(fn=_cmd_trace)

    serve_p = sub.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8823)
    serve_p.add_argument("--config", default=None)
    serve_p.add_argument("--script-book", default=None)
    serve_p.add_argument("--time-scale", type=float, default=None)
    serve_p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidSpec, SpecMismatch) as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except SemflowError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
