#!/usr/bin/env python3
"""
unravel.py - Unravel a finite-efficiency measurement record into pure-state trajectories.

Usage:
  python3 unravel.py RECORD.csv [CONFIG_SET] [--eta 0.4] [--basis z|phi] [--scheme segmented|beamsplitter]
                     [--n-samples N]

The record needs its `.meta.json` sidecar (written by simulate.py).

Outputs:
  trajectories/unravel_NNNNN.csv   first export_limit unraveled trajectories (with channel tags)
  ensemble_summary.csv             per-step mean / stderr Bloch vector
  consistency.csv                  weighted mean vs the dephased reconstruction (exact for
                                   the beamsplitter scheme, drifts for the segmented one)
  q_alice.csv, q_charlie.csv       per-sample arrows of time (+ sidecars)
  summary.json, manifest.json
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Any, Dict

import numpy as np

from config_loader import (
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    ConfigError,
    ConfigSetNotFoundError,
    RunConfig,
    add_run_arguments,
    dump_config,
    parse_config,
)
from qubit_arrow.manifest import RunRecorder
from qubit_arrow.records_io import (
    RecordFormatError,
    consistency_csv_text,
    ensemble_summary_csv_text,
    json_text,
    q_ensemble_csv_text,
    read_record,
    trajectory_csv_text,
)
from qubit_arrow.state import QubitValidationError
from qubit_arrow.stats import params_fingerprint
from qubit_arrow.trajectory import MeasurementRecord, check_record_dt
from qubit_arrow.unraveling import (
    alice_arrow_from_ensemble,
    charlie_arrow_from_ensemble,
    unravel_record,
    unraveling_consistency,
)


def run_unraveling(cfg: RunConfig, record: MeasurementRecord, record_meta: Dict[str, Any],
                   recorder: RunRecorder) -> Dict[str, Any]:
    params = cfg.sim_params(duration=len(record) * record.dt)
    check_record_dt(record, params)
    record_eta = record_meta.get("eta")
    if record_eta is not None and not math.isclose(float(record_eta), params.efficiency, rel_tol=1e-6):
        print(f"⚠ Record was drawn at η = {float(record_eta):g} but is unraveled at η = {params.efficiency:g}")
    ucfg = cfg.unravel_config()
    initial = cfg.initial()

    ensemble = unravel_record(record, params, ucfg, initial)
    recorder.add_steps("unraveled_steps", ensemble.n_samples * ensemble.n_steps)
    print(f"✓ Unraveled {ensemble.n_samples} trajectories over {ensemble.n_steps} steps "
          f"(basis {ucfg.basis}, {ucfg.scheme} scheme, η = {ucfg.eta:g})")

    exported = min(cfg.export_limit, ensemble.n_samples)
    for i in range(exported):
        recorder.write_text(f"trajectories/unravel_{i:05d}.csv", trajectory_csv_text(ensemble.trajectory(i)))

    recorder.write_text("ensemble_summary.csv",
                        ensemble_summary_csv_text(ensemble.mean_bloch(), ensemble.stderr_bloch()))
    report = unraveling_consistency(ensemble, params, initial)
    recorder.write_text("consistency.csv", consistency_csv_text(report))
    marker = "✓" if report.max_deviation < 4.0 else "⚠"
    print(f"{marker} Max deviation from the dephased reconstruction: {report.max_deviation:.2f} stderr "
          f"(effective samples {report.effective_samples:.0f})")

    fingerprint = params_fingerprint(params, ucfg, initial)
    duration = len(record) * record.dt
    arrows = {"alice": alice_arrow_from_ensemble(ensemble), "charlie": charlie_arrow_from_ensemble(ensemble)}
    for name, values in arrows.items():
        recorder.write_text(f"q_{name}.csv", q_ensemble_csv_text(values))
        meta = {
            "duration": duration,
            "dt": record.dt,
            "tau": cfg.tau,
            "mode": "unravel",
            "observer": name,
            "basis": ucfg.basis,
            "scheme": ucfg.scheme,
            "eta": ucfg.eta,
            "initial_state": cfg.initial_label,
            "n_traj": int(values.size),
            "seed": ucfg.seed,
            "record_seed": record_meta.get("seed"),
            "params_fingerprint": fingerprint,
        }
        recorder.write_text(f"q_{name}.meta.json", json_text(meta))

    q_alice = arrows["alice"]
    alice_var = float(np.var(q_alice, ddof=1)) if q_alice.size > 1 else 0.0
    print(f"  Alice Q: mean {np.mean(q_alice):.4f}, variance {alice_var:.4f}")
    return {
        "basis": ucfg.basis,
        "scheme": ucfg.scheme,
        "eta": ucfg.eta,
        "n_samples": ensemble.n_samples,
        "n_steps": ensemble.n_steps,
        "alice_fraction": ensemble.alice_fraction,
        "effective_samples": report.effective_samples,
        "max_deviation_stderr": report.max_deviation,
        "alice_q_mean": float(np.mean(q_alice)),
        "alice_q_variance": alice_var,
        "charlie_q_mean": float(np.mean(arrows["charlie"])),
        "exported": exported,
    }


def main():
    ap = argparse.ArgumentParser(description="Unravel a measurement record into pure-state trajectory ensembles.")
    ap.add_argument("record", help="Record CSV (step,r) with a .meta.json sidecar")
    add_run_arguments(ap)
    args = ap.parse_args()

    try:
        cfg, config_set = parse_config(args)
    except ConfigSetNotFoundError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except ConfigError as e:
        print(f"Error: invalid configuration\n{e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    if config_set:
        print(f"Loaded configuration set: {config_set.name}")

    try:
        record, record_meta = read_record(Path(args.record))
    except RecordFormatError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    print(f"Loaded record: {args.record} ({len(record)} steps)")

    out_dir = Path(cfg.output_dir) if args.out else Path(cfg.output_dir) / f"unravel_{cfg.basis}"
    recorder = RunRecorder(out_dir, "unravel", dump_config(cfg), cfg.seed)
    try:
        summary = run_unraveling(cfg, record, record_meta, recorder)
        summary["record"] = str(args.record)
        recorder.write_text("summary.json", json_text(summary))
    except QubitValidationError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except OSError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: could not write outputs: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)

    recorder.finalize()
    print(f"\nDone. Wrote {len(recorder.manifest.files)} files into: {out_dir}")


if __name__ == "__main__":
    main()
