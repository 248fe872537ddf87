"""
CSV / JSON persistence for records, trajectories, ensembles and statistics.

Every writer comes as a `*_text` renderer so that run outputs can be funnelled
through one writer (see manifest.RunRecorder) and checksummed. Floats are
written with repr(), which round-trips exactly.

Records are stored pre-scaled to the dimensionless readout convention:
CSV `step,r` plus a `<stem>.meta.json` sidecar holding dt, strength, seed and
generator_version.
"""

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .stats import FtCurve, Histogram, QEnsemble
from .trajectory import MeasurementRecord, Trajectory

GENERATOR_VERSION = f"qubit_arrow {__version__}"


class RecordFormatError(ValueError):
    """Raised when a record or ensemble file is malformed or its sidecar is missing."""
    pass


# ---------- utils ----------
def _fmt(value: Any) -> str:
    if value is None or value == "":
        return ""
    return repr(float(value))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def json_text(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def meta_path_for(csv_path: Path) -> Path:
    """`data/rec.csv` → `data/rec.meta.json`."""
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def _read_meta(csv_path: Path) -> Dict[str, Any]:
    meta_path = meta_path_for(csv_path)
    if not meta_path.exists():
        raise RecordFormatError(
            f"Missing metadata sidecar for {csv_path.name}: expected {meta_path.name} next to it"
        )
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise RecordFormatError(f"Invalid JSON in {meta_path}: {e}") from e
    if not isinstance(meta, dict):
        raise RecordFormatError(f"{meta_path} must hold a JSON object")
    return meta


def _read_rows(path: Path, expected_header: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise RecordFormatError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(expected_header):
            raise RecordFormatError(
                f"{path.name}: expected header '{','.join(expected_header)}', got '{','.join(header or [])}'"
            )
        return [row for row in reader if row]


# ---------- measurement records ----------
def record_csv_text(record: MeasurementRecord) -> str:
    return csv_text(["step", "r"], ((k, _fmt(r)) for k, r in enumerate(record.values)))


def record_meta(record: MeasurementRecord, seed: Optional[int] = None, **extra: Any) -> Dict[str, Any]:
    meta = {
        "dt": record.dt,
        "strength": record.strength,
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
    }
    meta.update(extra)
    return meta


def read_record(path: Path) -> Tuple[MeasurementRecord, Dict[str, Any]]:
    """Load a record CSV and its sidecar; the sidecar is required."""
    path = Path(path)
    meta = _read_meta(path)
    for key in ("dt", "strength"):
        if key not in meta:
            raise RecordFormatError(f"{meta_path_for(path).name} is missing '{key}'")
    rows = _read_rows(path, ["step", "r"])
    values = []
    for expected_step, row in enumerate(rows):
        try:
            step, r = int(row[0]), float(row[1])
        except (ValueError, IndexError) as e:
            raise RecordFormatError(f"{path.name}: bad row {row}") from e
        if step != expected_step:
            raise RecordFormatError(f"{path.name}: expected step {expected_step}, found {step}")
        values.append(r)
    try:
        record = MeasurementRecord(np.array(values, dtype=float), float(meta["dt"]), float(meta["strength"]))
    except ValueError as e:
        raise RecordFormatError(f"{path.name}: {e}") from e
    return record, meta


# ---------- trajectories and ensembles ----------
def trajectory_csv_text(traj: Trajectory) -> str:
    """
    step,x,y,z,r,q_inc[,channel] with one row per state; the final state row
    has no readout.
    """
    header = ["step", "x", "y", "z", "r", "q_inc"]
    with_channels = traj.channels is not None
    if with_channels:
        header.append("channel")
    n = traj.n_steps
    rows = []
    for k in range(n + 1):
        x, y, z = traj.states[k]
        row = [k, _fmt(x), _fmt(y), _fmt(z)]
        if k < n:
            row += [_fmt(traj.record.values[k]), _fmt(traj.q_increments[k])]
            if with_channels:
                row.append(str(traj.channels[k]))
        else:
            row += ["", ""] + ([""] if with_channels else [])
        rows.append(row)
    return csv_text(header, rows)


def ensemble_summary_csv_text(mean: np.ndarray, stderr: np.ndarray) -> str:
    header = ["step", "mean_x", "mean_y", "mean_z", "stderr_x", "stderr_y", "stderr_z"]
    rows = ([k] + [_fmt(v) for v in mean[k]] + [_fmt(v) for v in stderr[k]] for k in range(len(mean)))
    return csv_text(header, rows)


def consistency_csv_text(report) -> str:
    """Per-step ensemble mean, dephased reconstruction and deviation in stderr units."""
    header = ["step"]
    for prefix in ("mean", "stderr", "recon", "dev"):
        header += [f"{prefix}_{c}" for c in "xyz"]
    rows = []
    for k in range(len(report.mean)):
        row = [k]
        for block in (report.mean, report.stderr, report.reconstruction, report.deviation):
            row += [_fmt(v) for v in block[k]]
        rows.append(row)
    return csv_text(header, rows)


# ---------- Q ensembles and statistics ----------
def q_ensemble_csv_text(values: np.ndarray) -> str:
    return csv_text(["trajectory", "q"], ((i, _fmt(q)) for i, q in enumerate(values)))


def read_q_ensemble(path: Path) -> Tuple[QEnsemble, Dict[str, Any]]:
    """Load a Q-ensemble CSV with its sidecar (duration, tau, mode, initial_state, ...)."""
    path = Path(path)
    meta = _read_meta(path)
    rows = _read_rows(path, ["trajectory", "q"])
    try:
        values = np.array([float(row[1]) for row in rows], dtype=float)
    except (ValueError, IndexError) as e:
        raise RecordFormatError(f"{path.name}: non-numeric Q value") from e
    try:
        ensemble = QEnsemble(values, duration=float(meta.get("duration", 0.0)),
                             params_fingerprint=str(meta.get("params_fingerprint", "")))
    except ValueError as e:
        raise RecordFormatError(f"{path.name}: {e}") from e
    return ensemble, meta


def histogram_csv_text(hist: Histogram) -> str:
    density = hist.density()
    rows = ((_fmt(c), int(n), _fmt(d)) for c, n, d in zip(hist.centers, hist.counts, density))
    return csv_text(["bin_center", "count", "density"], rows)


def ft_curve_csv_text(curve: FtCurve) -> str:
    rows = ((_fmt(q), _fmt(l), _fmt(e)) for q, l, e in zip(curve.q, curve.ln_ratio, curve.stderr))
    return csv_text(["q", "ln_ratio", "stderr"], rows)
