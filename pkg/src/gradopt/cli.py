"""Command line entry point: ``gradopt run | list | validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import harness
from .errors import GradOptError
from .objectives import SYNTHETIC


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config)
    if getattr(args, "budget", None) is not None:
        cfg.budget = args.budget
    if getattr(args, "reps", None) is not None:
        cfg.repetitions = args.reps
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, records = harness.run_experiment(cfg, workers=args.workers, return_records=True)
    ext = "md" if args.format == "markdown" else "csv"
    (out / f"results.{ext}").write_text(harness.emit_results(table, args.format))
    if not args.no_traces:
        harness.write_traces(records, out)
    manifest = {
        "config": cfg.to_dict(),
        "reference_best": {p: float(v) for p, v in table.reference_best.items()},
        "failed_runs": sum(r.failed for r in records),
        "format": args.format,
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    print(harness.emit_results(table, "markdown"), end="")
    return 0


def cmd_list(args) -> int:
    print("algorithms:")
    for name in harness.RUNNABLE_ALGORITHMS:
        print(f"  {name}")
    for name in harness.EXTERNAL_ALGORITHMS:
        print(f"  {name} (external results only)")
    print("problem kinds:")
    for kind in harness.PROBLEM_KINDS:
        print(f"  {kind}")
    print("synthetic functions:")
    for name in sorted(SYNTHETIC):
        print(f"  {name}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    cfg.validate(resolve=True)
    runs = len(cfg.problems) * len(cfg.algorithms) * cfg.repetitions
    print(f"ok: {len(cfg.problems)} problems, {len(cfg.algorithms)} algorithms, "
          f"{cfg.repetitions} repetitions ({runs} runs), budget {cfg.budget}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradopt", description="GradOpt benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write results")
    run.add_argument("--config", required=True)
    run.add_argument("--budget", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default="results")
    run.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    run.add_argument("--no-traces", action="store_true", help="skip per-run trace files")
    run.set_defaults(func=cmd_run)

    lst = sub.add_parser("list", help="list algorithms and problem kinds")
    lst.set_defaults(func=cmd_list)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    val.add_argument("--budget", type=int)
    val.add_argument("--reps", type=int)
    val.add_argument("--seed", type=int)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GradOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
