"""``catenav`` command line: run, batch, metrics, plot, validate and gen.

Exit status is 0 on success, 1 when a run does not converge (or a batch has
unsafe runs) and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .geometry import ScenarioError, ScenarioSpec, validate_scenario
from .harness import (NAMED_SCENARIOS, BatchSpec, GenerationError, generate_random_scenario,
                      named_scenario, read_record_csv, run_batch, run_simulation, write_run_outputs)
from .metrics import compute_metrics
from .svg import render_svg

EXIT_OK, EXIT_RUN_FAILED, EXIT_USAGE = 0, 1, 2
CONTROLLERS = ("CATE", "FOTE", "CAPT_ASSIGN", "GREEDY")
SCHEDULES = {"gauss-seidel": "gauss-seidel", "parallel": "parallel-snapshot", "joint": "joint"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def load_scenario(ref: str) -> ScenarioSpec:
    """A named scenario or a path to a scenario JSON file."""
    if ref in NAMED_SCENARIOS:
        return named_scenario(ref)
    path = Path(ref)
    if not path.is_file():
        raise ScenarioError(f"{ref!r} is neither a scenario file nor one of: {', '.join(NAMED_SCENARIOS)}")
    return ScenarioSpec.from_json(path.read_text())


def _apply_overrides(spec: ScenarioSpec, args) -> ScenarioSpec:
    changes = {}
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.timeout is not None:
        changes["timeout"] = args.timeout
    if args.schedule is not None:
        changes["schedule"] = SCHEDULES[args.schedule]
    if args.unicycle:
        changes["unicycle"] = True
    if changes:
        spec = spec.with_params(**changes)
    if args.controller is not None:
        spec = spec.replace(controller=args.controller)
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    return spec


def _check_valid(spec: ScenarioSpec) -> bool:
    report = validate_scenario(spec)
    for v in report.violations:
        print(f"error: {v}", file=sys.stderr)
    return report.ok


def cmd_run(args) -> int:
    spec = _apply_overrides(load_scenario(args.scenario), args)
    if not _check_valid(spec):
        return EXIT_USAGE
    record = run_simulation(spec)
    report = write_run_outputs(spec, record, args.out)
    print(report.to_json())
    if report.success:
        return EXIT_OK
    print(f"run ended with {record.termination}", file=sys.stderr)
    return EXIT_RUN_FAILED


def cmd_batch(args) -> int:
    path = Path(args.spec)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read batch spec: {exc}") from exc
    if args.timeout is not None:
        doc["timeout"] = args.timeout
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.dt is not None:
        doc.setdefault("params", {})["dt"] = args.dt
    if args.schedule is not None:
        doc.setdefault("params", {})["schedule"] = SCHEDULES[args.schedule]
    doc["out_dir"] = args.out
    batch = BatchSpec.from_dict(doc)

    def progress(k, total, rep):
        if args.verbose:
            print(f"[{k}/{total}] {rep.controller} N={rep.N} M={rep.M} seed={rep.seed} {rep.termination}",
                  file=sys.stderr)

    reports, _ = run_batch(batch, progress=progress)
    unsafe = [r for r in reports if r.termination in ("safety-breach", "solver-failure")]
    print(f"{len(reports)} runs written to {args.out}")
    if unsafe:
        print(f"{len(unsafe)} run(s) ended in a breach or solver failure", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def cmd_metrics(args) -> int:
    report = compute_metrics(read_record_csv(args.record))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    Path(args.out).write_text(render_svg(read_record_csv(args.record)))
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = load_scenario(args.scenario)
    if _check_valid(spec):
        print("ok")
        return EXIT_OK
    return EXIT_USAGE


def cmd_gen(args) -> int:
    if args.scenario:
        spec = load_scenario(args.scenario)
    else:
        if args.N is None or args.M is None:
            raise UsageError("gen needs either --scenario or both -N and -M")
        spec = generate_random_scenario(args.N, args.M, 0 if args.seed is None else args.seed,
                                        pattern=args.pattern)
    spec = _apply_overrides(spec, args)
    text = spec.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--dt", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--schedule", choices=tuple(SCHEDULES))
    p.add_argument("--unicycle", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="catenav", description="Multi-robot formation navigation simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file or named scenario")
    p.add_argument("--out", required=True, help="output directory")
    _overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a grid of random scenarios")
    p.add_argument("--spec", required=True, help="batch spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true", help="report every finished run")
    _overrides(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("metrics", help="recompute metrics from a record")
    p.add_argument("--record", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("plot", help="draw a record as SVG")
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate", help="check a scenario's standing assumptions")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="write a scenario JSON (random or named)")
    p.add_argument("--scenario", help="named scenario or file to normalize")
    p.add_argument("-N", type=int)
    p.add_argument("-M", type=int)
    p.add_argument("--pattern", default="arrow", choices=("arrow", "column", "platoon"))
    p.add_argument("--out")
    _overrides(p)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, GenerationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
