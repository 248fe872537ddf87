#!/usr/bin/env python3
"""
simulate.py - Simulate unit-efficiency trajectory ensembles and their arrow-of-time statistics.

Outputs (under the run's output directory):
  q_T<duration>us.csv (+ .meta.json)   Q per trajectory at each duration checkpoint
  hist_T<duration>us.csv               symmetric histogram of Q
  ft_T<duration>us.csv                 ln P(Q)/P(-Q) curve
  trajectories/traj_NNNNN.csv          first export_limit trajectories
  records/record_NNNNN.csv (+ sidecar) their measurement records (finite-efficiency when eta < 1)
  summary.json, manifest.json
"""

import argparse
import sys
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
from qubit_arrow.ensemble import checkpoint_steps_for, simulate_ensemble, stream_for
from qubit_arrow.manifest import RunRecorder
from qubit_arrow.records_io import (
    ft_curve_csv_text,
    histogram_csv_text,
    json_text,
    q_ensemble_csv_text,
    record_csv_text,
    record_meta,
    trajectory_csv_text,
)
from qubit_arrow.state import QubitValidationError, SimParams
from qubit_arrow.stats import (
    QEnsemble,
    StatisticsError,
    analytic_qnd_cdf,
    build_histogram,
    detailed_ft_curve,
    integral_ft,
    ks_distance,
    params_fingerprint,
)
from qubit_arrow.trajectory import generate_trajectory
from qubit_arrow.unraveling import unraveled_dephasing


def duration_label(duration: float) -> str:
    """0.32e-6 → 'T0.32us'."""
    return f"T{round(duration * 1e6, 9):g}us"


def unit_efficiency_params(cfg: RunConfig) -> SimParams:
    return SimParams(dt=cfg.dt, tau=cfg.tau, rabi=cfg.rabi, duration=cfg.max_duration, seed=cfg.seed)


def record_params(cfg: RunConfig) -> SimParams:
    """Parameters of the exported records: the finite-efficiency process when eta < 1."""
    if cfg.eta < 1.0:
        return cfg.sim_params()
    return unit_efficiency_params(cfg)


def export_trajectories(cfg: RunConfig, recorder: RunRecorder) -> int:
    """
    Regenerate and write the first export_limit trajectories with their records.

    With eta < 1 the records come from the finite-efficiency observer (dephasing
    Γ - 1/(2τ) after every measurement), ready to be unraveled at the same η.
    """
    params = record_params(cfg)
    dephase_extra = unraveled_dephasing(params)
    count = min(cfg.export_limit, cfg.n_traj)
    initial = cfg.initial()
    for i in range(count):
        traj = generate_trajectory(params, initial, stream_for(cfg.seed, i), dephase_extra=dephase_extra)
        recorder.write_text(f"trajectories/traj_{i:05d}.csv", trajectory_csv_text(traj))
        recorder.write_text(f"records/record_{i:05d}.csv", record_csv_text(traj.record))
        meta = record_meta(traj.record, seed=cfg.seed, trajectory=i, eta=params.efficiency,
                           dephase_extra=dephase_extra, initial_state=cfg.initial_label,
                           rabi=cfg.rabi, tau=cfg.tau)
        recorder.write_text(f"records/record_{i:05d}.meta.json", json_text(meta))
    return count


def ensemble_statistics(cfg: RunConfig, q: np.ndarray, duration: float, fingerprint: str,
                        recorder: RunRecorder) -> Dict[str, Any]:
    """Write the Q ensemble of one checkpoint plus its histogram, FT curve and IFT summary."""
    label = duration_label(duration)
    ensemble = QEnsemble(q, duration=duration, params_fingerprint=fingerprint)
    recorder.write_text(f"q_{label}.csv", q_ensemble_csv_text(ensemble.values))
    meta = {
        "duration": duration,
        "dt": cfg.dt,
        "tau": cfg.tau,
        "rabi": cfg.rabi,
        "mode": cfg.mode,
        "initial_state": cfg.initial_label,
        "n_traj": len(ensemble),
        "seed": cfg.seed,
        "params_fingerprint": fingerprint,
    }
    recorder.write_text(f"q_{label}.meta.json", json_text(meta))

    summary: Dict[str, Any] = {"duration": duration, "n_traj": len(ensemble),
                               "q_mean": float(np.mean(q)), "q_min": float(np.min(q)), "q_max": float(np.max(q))}

    hist = build_histogram(ensemble, cfg.bin_width, cfg.q_max)
    recorder.write_text(f"hist_{label}.csv", histogram_csv_text(hist))
    summary["histogram"] = {"underflow": hist.underflow, "overflow": hist.overflow}

    try:
        curve = detailed_ft_curve(hist, min_count=cfg.min_bin_count, window=cfg.ft_window)
        recorder.write_text(f"ft_{label}.csv", ft_curve_csv_text(curve))
        summary["ft_slope"] = curve.slope
        summary["ft_slope_stderr"] = curve.slope_stderr
        print(f"  ✓ {label}: FT slope {curve.slope:.3f} ± {curve.slope_stderr:.3f} "
              f"({curve.n_fit_points} bins)")
    except StatisticsError as e:
        summary["ft_slope"] = None
        print(f"  ⚠ {label}: no FT curve ({e})")

    ift = integral_ft(ensemble)
    summary["integral_ft"] = {"mean": ift.mean, "stderr": ift.stderr, "median": ift.median,
                              "log_mean": ift.log_mean, "deficit": ift.deficit}
    print(f"    <e^-Q> = {ift.mean:.4f} ± {ift.stderr:.4f}")

    if cfg.mode == "qnd" and cfg.initial_label == "x+" and duration > 0:
        ks = ks_distance(ensemble, lambda v: analytic_qnd_cdf(v, duration, cfg.tau))
        summary["ks_analytic_qnd"] = ks
        print(f"    KS distance to the analytic QND law: {ks:.4f}")
    return summary


def run_simulation(cfg: RunConfig, recorder: RunRecorder, quiet: bool = False) -> Dict[str, Any]:
    params = unit_efficiency_params(cfg)
    checkpoints = checkpoint_steps_for(cfg.durations, cfg.dt)
    fingerprint = params_fingerprint(params, cfg.initial_label)

    exported = export_trajectories(cfg, recorder)
    print(f"✓ Exported {exported} trajectories")

    summary: Dict[str, Any] = {"n_traj": cfg.n_traj, "mode": cfg.mode, "initial_state": cfg.initial_label,
                               "exported": exported, "durations": {}}
    if cfg.n_traj < cfg.min_stats_samples:
        print(f"⚠ n_traj = {cfg.n_traj} is below min_stats_samples = {cfg.min_stats_samples}; "
              f"skipping ensemble statistics")
        return summary

    result = simulate_ensemble(params, cfg.initial(), cfg.n_traj, checkpoint_steps=checkpoints,
                               threads=cfg.threads, chunk_size=cfg.chunk_size, quiet=quiet)
    recorder.add_steps("trajectory_steps", cfg.n_traj * max(checkpoints))
    print(f"✓ Simulated {result.n_traj} trajectories ({max(checkpoints)} steps)")

    for j, duration in enumerate(cfg.durations):
        stats = ensemble_statistics(cfg, result.q[:, j], duration, fingerprint, recorder)
        stats["q_continuous_mean"] = float(np.mean(result.q_continuous[:, j]))
        summary["durations"][duration_label(duration)] = stats
    return summary


def main():
    ap = argparse.ArgumentParser(description="Simulate qubit trajectory ensembles and their arrow-of-time statistics.")
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

    print(f"Output: {cfg.output_dir}")
    print(f"  mode: {cfg.mode}  initial: {cfg.initial_label}  n_traj: {cfg.n_traj}  seed: {cfg.seed}")
    recorder = RunRecorder(cfg.output_dir, "simulate", dump_config(cfg), cfg.seed)
    try:
        summary = run_simulation(cfg, recorder, quiet=args.quiet)
        recorder.write_text("summary.json", json_text(summary))
    except (QubitValidationError, StatisticsError) as e:
        recorder.finalize("partial", str(e))
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except OSError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: could not write outputs: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)

    manifest_path = recorder.finalize()
    print(f"\nDone. Wrote {len(recorder.manifest.files)} files into: {cfg.output_dir}")
    if manifest_path:
        print(f"Manifest: {manifest_path}")


if __name__ == "__main__":
    main()
