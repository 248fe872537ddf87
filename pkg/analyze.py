#!/usr/bin/env python3
"""
analyze.py - Fluctuation-theorem statistics over an existing Q-ensemble CSV.

Usage:
  python3 analyze.py data/qnd_fig4/q_T0.5076us.csv [CONFIG_SET] [--bin-width 0.25] [--q-max 10]

Reads `trajectory,q` plus the `.meta.json` sidecar and writes the histogram,
the detailed-FT curve and an analysis.json into `analysis_<stem>/` next to the
input (or --out).
"""

import argparse
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
    ft_curve_csv_text,
    histogram_csv_text,
    json_text,
    read_q_ensemble,
)
from qubit_arrow.stats import (
    QEnsemble,
    StatisticsError,
    analytic_qnd_cdf,
    build_histogram,
    detailed_ft_curve,
    integral_ft,
    ks_distance,
    validate_symmetry,
)


def analyze_ensemble(cfg: RunConfig, ensemble: QEnsemble, meta: Dict[str, Any],
                     recorder: RunRecorder) -> Dict[str, Any]:
    ensemble.require_nonempty()
    q = ensemble.values
    result: Dict[str, Any] = {
        "n": len(ensemble),
        "duration": ensemble.duration,
        "q_mean": float(np.mean(q)),
        "q_std": float(np.std(q, ddof=1)) if q.size > 1 else 0.0,
        "fraction_positive": float(np.mean(q > 0)),
    }

    hist = build_histogram(ensemble, cfg.bin_width, cfg.q_max)
    validate_symmetry(hist)
    recorder.write_text("histogram.csv", histogram_csv_text(hist))
    result["histogram"] = {"bin_width": hist.bin_width, "bins": int(hist.counts.size),
                           "underflow": hist.underflow, "overflow": hist.overflow}
    print(f"✓ Histogram: {hist.counts.size} bins of width {hist.bin_width:g}")

    try:
        curve = detailed_ft_curve(hist, min_count=cfg.min_bin_count, window=cfg.ft_window)
        recorder.write_text("ft_curve.csv", ft_curve_csv_text(curve))
        result["ft"] = {"slope": curve.slope, "slope_stderr": curve.slope_stderr,
                        "intercept": curve.intercept, "fit_points": curve.n_fit_points}
        print(f"✓ Detailed FT slope: {curve.slope:.3f} ± {curve.slope_stderr:.3f}")
    except StatisticsError as e:
        result["ft"] = None
        print(f"⚠ No detailed-FT curve: {e}")

    ift = integral_ft(ensemble)
    result["integral_ft"] = {"mean": ift.mean, "stderr": ift.stderr, "median": ift.median,
                             "log_mean": ift.log_mean, "deficit": ift.deficit}
    print(f"✓ <e^-Q> = {ift.mean:.4f} ± {ift.stderr:.4f}")

    tau = meta.get("tau")
    if (meta.get("mode") == "qnd" and meta.get("initial_state") == "x+"
            and ensemble.duration > 0 and tau):
        ks = ks_distance(ensemble, lambda v: analytic_qnd_cdf(v, ensemble.duration, float(tau)))
        result["ks_analytic_qnd"] = ks
        print(f"✓ KS distance to the analytic QND law: {ks:.4f}")
    return result


def main():
    ap = argparse.ArgumentParser(description="Compute fluctuation-theorem statistics for a Q-ensemble CSV.")
    ap.add_argument("ensemble", help="Q-ensemble CSV (trajectory,q) with a .meta.json sidecar")
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

    path = Path(args.ensemble)
    try:
        ensemble, meta = read_q_ensemble(path)
        ensemble.require_nonempty()
    except (RecordFormatError, StatisticsError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    print(f"Loaded {len(ensemble)} Q values from {path} (T = {ensemble.duration:.4g} s)")

    out_dir = Path(cfg.output_dir) if args.out else path.parent / f"analysis_{path.stem}"
    recorder = RunRecorder(out_dir, "analyze", dump_config(cfg), cfg.seed)
    try:
        result = analyze_ensemble(cfg, ensemble, meta, recorder)
        result["source"] = str(path)
        recorder.write_text("analysis.json", json_text(result))
    except StatisticsError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except OSError as e:
        recorder.finalize("partial", str(e))
        print(f"Error: could not write outputs: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)

    recorder.finalize()
    print(f"\nDone. Wrote analysis into: {out_dir}")


if __name__ == "__main__":
    main()
