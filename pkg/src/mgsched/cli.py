"""Command-line entry points: ingestion -> scheduling -> validation -> reports.

Subcommands: schedule, validate, experiment, export. All artifacts are
CSV (plus MPS/LP model exports); plotting is left to external tooling.
Exit codes: 0 success, 1 validation violations or solve failure,
2 usage errors (argparse default). The default output directory comes
from the MGSCHED_OUT environment variable when --out is not given.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .grid_model import (DocumentParseError, SystemValidationError,
                         load_system)
from .milp_core import ModelError
from .scheduler import (ScheduleOptions, build_uc_model, load_schedule_csv,
                        solve_schedule)
from .validation import EXPERIMENTS, experiment_suite, validate_schedule

ENV_OUT = "MGSCHED_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgsched",
        description="Frequency-secured microgrid scheduling with virtual "
                    "inertia/damping dispatch.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--input", required=needs_input,
                       help="system description (JSON or TOML)")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${ENV_OUT} or ./out)")
        p.add_argument("--case", choices=("I", "II", "III", "IV"),
                       default="IV",
                       help="service configuration: I no virtual services, "
                            "II inertia only, III damping only, IV both")
        p.add_argument("--robust-k", type=int, default=0, metavar="N",
                       help="tolerate up to N simultaneous service failures")
        p.add_argument("--tau-max", type=int, default=None, metavar="N",
                       help="cap on hours with service parameter changes")
        p.add_argument("--delay", type=float, default=None, metavar="SECONDS",
                       help="override the load-shedding delay")
        p.add_argument("--seed", type=int, default=0, metavar="N",
                       help="seed for randomized validation sampling")
        p.add_argument("--gap", type=float, default=2e-3, metavar="F",
                       help="relative optimality gap tolerance")
        p.add_argument("--dry-run", action="store_true",
                       help="build and check the model without solving")

    p_sched = sub.add_parser("schedule", help="solve a day-ahead schedule")
    common(p_sched)
    p_sched.add_argument("--export", choices=("mps", "lp"), default=None,
                         help="also write the model in this format")

    p_val = sub.add_parser("validate",
                           help="frequency-validate an existing schedule")
    p_val.add_argument("schedule", help="schedule CSV to validate")
    common(p_val)
    p_val.add_argument("--export", choices=("mps", "lp"), default=None,
                       help=argparse.SUPPRESS)

    p_exp = sub.add_parser("experiment", help="run a named benchmark study")
    p_exp.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    common(p_exp)
    p_exp.add_argument("--export", choices=("mps", "lp"), default=None,
                       help=argparse.SUPPRESS)

    p_exExp = sub.add_parser("export", help="write the model without solving")
    common(p_exExp)
    p_exExp.add_argument("--export", choices=("mps", "lp"), default="mps",
                         help="model format to write (default mps)")
    return parser


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUT) or "out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(args):
    path = Path(args.input)
    if not path.exists():
        print(f"mgsched: input file not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    system = load_system(path)
    if args.delay is not None:
        system = dataclasses.replace(
            system, limits=dataclasses.replace(system.limits,
                                               shed_delay=args.delay))
    return system


def _options(args) -> ScheduleOptions:
    return ScheduleOptions.for_case(
        args.case, robust_k=args.robust_k, tau_max=args.tau_max,
        gap=args.gap)


def cmd_schedule(args) -> int:
    system = _load(args)
    options = _options(args)
    out = _out_dir(args)
    model, _ = build_uc_model(system, None, options)
    if args.export:
        ext = args.export
        (out / f"model.{ext}").write_text(
            model.export_standard(ext.upper()))
    if args.dry_run:
        print(f"model ok: {len(model.variables)} variables, "
              f"{len(model.linear)} linear rows, {len(model.cones)} cone "
              f"rows, {len(model.binary_ids)} binaries")
        return 0
    with open(out / "solve.log", "w") as log:
        schedule = solve_schedule(system, None, options, log=log)
    schedule.write_csv(out / "schedule.csv")
    with open(out / "costs.csv", "w") as fh:
        fh.write("component,value\n")
        for k, v in schedule.cost.items():
            fh.write(f"{k},{v:.6f}\n")
        fh.write(f"total,{schedule.objective:.6f}\n")
    report = validate_schedule(system, schedule)
    report.write_csv(out / "frequency_report.csv")
    print(f"objective {schedule.objective:.4f} ({schedule.status}); "
          f"artifacts in {out}")
    if not report.ok:
        for t, s, msg in report.violations:
            print(f"violation at hour {t}, scenario {s}: {msg}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    system = _load(args)
    sched_path = Path(args.schedule)
    if not sched_path.exists():
        print(f"mgsched: schedule file not found: {sched_path}",
              file=sys.stderr)
        return 2
    schedule = load_schedule_csv(sched_path)
    if not schedule.events or not schedule.commit:
        print("mgsched: schedule file has no event/commitment rows",
              file=sys.stderr)
        return 2
    out = _out_dir(args)
    if args.dry_run:
        print(f"schedule ok: {schedule.horizon} hours, "
              f"{schedule.n_scenarios} scenarios")
        return 0
    report = validate_schedule(system, schedule)
    report.write_csv(out / "frequency_report.csv")
    mean, std = report.nadir_stats()
    print(f"{len(report.verdicts)} events checked; nadir mean {mean:.4f} Hz, "
          f"std {std:.4f} Hz; {len(report.violations)} violations")
    for t, s, msg in report.violations:
        print(f"violation at hour {t}, scenario {s}: {msg}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_experiment(args) -> int:
    system = _load(args)
    out = _out_dir(args)
    if args.name not in EXPERIMENTS:
        print(f"mgsched: unknown experiment {args.name!r}; valid names: "
              f"{', '.join(EXPERIMENTS)}", file=sys.stderr)
        return 2
    if args.dry_run:
        model, _ = build_uc_model(system, None, _options(args))
        print(f"model ok: {len(model.variables)} variables, "
              f"{len(model.binary_ids)} binaries")
        return 0
    rows = experiment_suite(args.name, system, out_dir=out,
                            base_options=_options(args),
                            log=lambda m: print(m))
    print(f"{args.name}: {len(rows)} rows written to {out}")
    return 0


def cmd_export(args) -> int:
    system = _load(args)
    out = _out_dir(args)
    model, _ = build_uc_model(system, None, _options(args))
    ext = args.export
    try:
        text = model.export_standard(ext.upper())
    except ModelError as e:
        print(f"mgsched: export failed: {e}", file=sys.stderr)
        return 1
    path = out / f"model.{ext}"
    path.write_text(text)
    print(f"wrote {path} ({len(model.variables)} variables, "
          f"{len(model.linear)} rows)")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return {"schedule": cmd_schedule, "validate": cmd_validate,
                "experiment": cmd_experiment, "export": cmd_export,
                }[args.command](args)
    except (SystemValidationError, DocumentParseError, ModelError) as e:
        print(f"mgsched: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
