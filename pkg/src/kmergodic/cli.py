"""Command-line entry point: ``kmergodic {run,suite,sample-target,export}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .harness import (
    OUTPUT_ENV,
    ScenarioError,
    TrialError,
    default_output_dir,
    load_scenario,
    run_coverage_suite,
    run_horizon_suite,
    run_kernel_suite,
    run_scaling_suite,
    run_scenario,
)

log = logging.getLogger("kmergodic")

SUITE_DEFAULTS = {"horizon": "box2d", "kernels": "bunny", "scaling": "scaling", "coverage": "bunny"}


class CLIError(Exception):
    def __init__(self, code: int, message: str, **info):
        super().__init__(message)
        self.code = code
        self.info = info


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser, scenario_required: bool = True) -> None:
    p.add_argument("--scenario", required=scenario_required,
                   help="scenario TOML file, or the name of a bundled scenario")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="seed to run; repeatable; replaces the scenario's seed list")
    p.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE",
                   help="override a scenario key, e.g. planner.mpc.horizon=60 (TOML literal values)")
    p.add_argument("--out", type=Path, default=None,
                   help=f"output root (default: ${OUTPUT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmergodic", description="Kernel mean embedding ergodic coverage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario for each seed")
    _common(p)
    p.add_argument("--dump-error-state", action="store_true",
                   help="also write the error state after every step (t, e_1..e_M)")
    p.add_argument("--workers", type=int, default=1, help="parallel trial processes")

    p = sub.add_parser("suite", help="run an experiment suite")
    p.add_argument("name", choices=sorted(SUITE_DEFAULTS), help="suite to run")
    _common(p, scenario_required=False)
    p.add_argument("--param", choices=["T", "M", "N_h"], default="T",
                   help="scaling suite: parameter to sweep")
    p.add_argument("--values", type=_int_list, default=None,
                   help="scaling suite: comma-separated values; horizon suite: horizons")
    p.add_argument("--repeats", type=int, default=None, help="scaling suite: timed calls per point")
    p.add_argument("--workers", type=int, default=1, help="parallel trial processes")

    p = sub.add_parser("sample-target", help="write the target samples of a scenario as CSV")
    _common(p)
    p.add_argument("--output", type=Path, default=None, help="CSV path (default: <out>/samples_<seed>.csv)")

    p = sub.add_parser("export", help="flatten per-trial summaries under a run directory into one CSV")
    p.add_argument("run_dir", type=Path, help="directory to scan, e.g. runs/coverage")
    p.add_argument("--output", type=Path, default=None, help="CSV path (default: <run_dir>/trials.csv)")
    return parser


def _load(args):
    try:
        return load_scenario(args.scenario, args.overrides)
    except ScenarioError as exc:
        raise CLIError(1, str(exc), key=exc.key) from None


def cmd_run(args) -> dict:
    scn = _load(args)
    records, summary = run_scenario(scn, args.seeds, args.out or default_output_dir(), "run",
                                    args.workers, args.dump_error_state or None)
    for r in records:
        s = r.summary()
        log.info("seed %d: final emmd %.6g, coverage %.3f", s["seed"], s["final_emmd"], s["final_coverage"])
    return summary


def cmd_suite(args) -> dict:
    if args.scenario is None:
        args.scenario = SUITE_DEFAULTS[args.name]
    scn = _load(args)
    out = args.out or default_output_dir()
    if args.name == "horizon":
        return run_horizon_suite(scn, args.values, args.seeds, out, args.workers)
    if args.name == "kernels":
        return run_kernel_suite(scn, None, args.seeds, out, args.workers)
    if args.name == "coverage":
        return run_coverage_suite(scn, None, args.seeds, out, args.workers)
    seed = args.seeds[0] if args.seeds else None
    return run_scaling_suite(scn, args.param, args.values, None, args.repeats, out, seed)


def cmd_sample_target(args) -> dict:
    scn = _load(args)
    seeds = args.seeds or scn.seeds[:1]
    written = []
    for seed in seeds:
        target = scn.target(seed)
        path = args.output or (args.out or default_output_dir()) / "samples" / scn.name / f"samples_{seed}.csv"
        if args.output and len(seeds) > 1:
            path = args.output.with_name(f"{args.output.stem}_{seed}{args.output.suffix}")
        path.parent.mkdir(parents=True, exist_ok=True)
        target.write_csv(path)
        written.append(str(path))
    return {"files": written}


def cmd_export(args) -> dict:
    if not args.run_dir.is_dir():
        raise CLIError(1, f"run directory not found: {args.run_dir}", path=str(args.run_dir))
    rows = []
    for p in sorted(args.run_dir.rglob("summary.json")):
        data = json.loads(p.read_text())
        if "seed" in data and "planner" in data:
            rows.append(data)
    if not rows:
        raise CLIError(1, f"no trial summaries under {args.run_dir}", path=str(args.run_dir))
    keys = sorted({k for r in rows for k in r})
    out = args.output or args.run_dir / "trials.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})
    return {"file": str(out), "rows": len(rows)}


COMMANDS = {"run": cmd_run, "suite": cmd_suite, "sample-target": cmd_sample_target, "export": cmd_export}


def _report(args, code: int, message: str, info: dict) -> int:
    if getattr(args, "json_errors", False):
        sys.stderr.write(json.dumps({"error": message, "exit_code": code, **info}) + "\n")
    else:
        sys.stderr.write(f"error: {message}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        result = COMMANDS[args.command](args)
    except CLIError as exc:
        return _report(args, exc.code, str(exc), exc.info)
    except ScenarioError as exc:
        return _report(args, 1, str(exc), {"key": exc.key})
    except TrialError as exc:
        return _report(args, 2, str(exc), {"module": exc.module, "step": exc.step_index})
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        return _report(args, 2, f"{args.command}: {type(exc).__name__}: {exc}", {"module": args.command})
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
