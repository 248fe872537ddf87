#!/usr/bin/env python3
"""
verify.py - Run the acceptance criteria end to end.

Usage:
  python3 verify.py [CONFIG_SET] [--scale 0.1] [--only 3 --only 5] [--seed N] [--threads N]

Writes verify_report.json (and a manifest) into `<output_dir>/verify/` (or
--out). Exit code 0 when every selected criterion passes, 3 otherwise.
"""

import argparse
import sys
from pathlib import Path

from config_loader import (
    EXIT_ACCEPTANCE,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    ConfigError,
    ConfigSetNotFoundError,
    add_run_arguments,
    dump_config,
    parse_config,
)
from qubit_arrow.acceptance import CRITERIA, CriterionResult, run_acceptance
from qubit_arrow.manifest import RunRecorder
from qubit_arrow.records_io import json_text

DEFAULT_VERIFY_TRAJ = 100_000


def print_result(result: CriterionResult):
    marker = "✓" if result.passed else "✗"
    print(f"{marker} [{result.number}] {result.name} ({result.seconds:.1f}s)")
    for key, value in result.details.items():
        if isinstance(value, float):
            print(f"    {key}: {value:.6g}")
        else:
            print(f"    {key}: {value}")


def main():
    ap = argparse.ArgumentParser(description="Run the acceptance suite and write a machine-readable report.")
    add_run_arguments(ap)
    ap.add_argument("--scale", type=float, default=1.0,
                    help="Multiply Monte Carlo sizes (default: 1.0; e.g. 0.1 for a quick run)")
    ap.add_argument("--only", type=int, action="append",
                    help=f"Run only this criterion (1-{len(CRITERIA)}, repeatable)")
    args = ap.parse_args()

    if args.scale <= 0:
        print("Error: --scale must be > 0", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    if args.only and any(n not in CRITERIA for n in args.only):
        print(f"Error: --only takes criterion numbers 1-{len(CRITERIA)}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)

    try:
        cfg, config_set = parse_config(args)
    except ConfigSetNotFoundError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except ConfigError as e:
        print(f"Error: invalid configuration\n{e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)

    n_traj = args.n_traj if args.n_traj is not None else DEFAULT_VERIFY_TRAJ
    out_dir = Path(cfg.output_dir) if args.out else Path(cfg.output_dir) / "verify"
    print(f"Running acceptance criteria (scale {args.scale:g}, seed {cfg.seed}, n_traj {n_traj})\n")

    recorder = RunRecorder(out_dir, "verify", dump_config(cfg), cfg.seed)
    report = run_acceptance(scale=args.scale, seed=cfg.seed, threads=cfg.threads, n_traj=n_traj,
                            only=args.only, quiet=args.quiet, on_result=print_result)
    try:
        recorder.write_text("verify_report.json", json_text(report.as_dict()))
    except OSError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: could not write report: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)
    recorder.finalize()

    passed = sum(r.passed for r in report.results)
    print(f"\n{passed}/{len(report.results)} criteria passed. Report: {out_dir / 'verify_report.json'}")
    if not report.passed:
        failed = ", ".join(str(r.number) for r in report.failures)
        print(f"Error: acceptance failed for criteria {failed}", file=sys.stderr)
        sys.exit(EXIT_ACCEPTANCE)


if __name__ == "__main__":
    main()
