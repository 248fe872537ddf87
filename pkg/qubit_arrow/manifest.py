"""
Run manifest: resolved config, seed, code version, per-file checksums and timings.

All outputs of a run go through RunRecorder.write_text, which writes the file
and records its sha256. The manifest itself is written exactly once, either
as `complete` or, after a failure, as `partial`.
"""

import hashlib
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from . import __version__
from .records_io import json_text

MANIFEST_NAME = "manifest.json"


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    code_version: str = __version__
    python_version: str = field(default_factory=lambda: sys.version.split()[0])
    started_at: str = field(default_factory=now_iso)
    finished_at: Optional[str] = None
    wall_seconds: Optional[float] = None
    status: str = "running"
    error: Optional[str] = None
    step_counts: Dict[str, int] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)


class RunRecorder:
    """Single writer sequence point for one run's output directory."""

    def __init__(self, out_dir: Path, command: str, config: Dict[str, Any], seed: int):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(command=command, config=config, seed=seed)
        self._t0 = time.perf_counter()
        self._finalized = False

    def path(self, relative: str) -> Path:
        return self.out_dir / relative

    def write_text(self, relative: str, text: str) -> Path:
        """Write `text` to out_dir/relative and record its checksum."""
        if self._finalized:
            raise RuntimeError("Manifest already written; no further outputs accepted")
        target = self.path(relative)
        target.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        target.write_bytes(data)
        self.manifest.files[Path(relative).as_posix()] = sha256_bytes(data)
        return target

    def add_steps(self, label: str, steps: int):
        self.manifest.step_counts[label] = int(steps)

    def finalize(self, status: str = "complete", error: Optional[str] = None) -> Optional[Path]:
        """Write manifest.json once. Returns None when even that write fails."""
        if self._finalized:
            return self.path(MANIFEST_NAME)
        self._finalized = True
        self.manifest.status = status
        self.manifest.error = error
        self.manifest.finished_at = now_iso()
        self.manifest.wall_seconds = round(time.perf_counter() - self._t0, 3)
        target = self.path(MANIFEST_NAME)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(json_text(asdict(self.manifest)), encoding="utf-8")
        except OSError as e:
            print(f"Warning: could not write {target}: {e}", file=sys.stderr)
            return None
        return target


def verify_checksums(out_dir: Path, manifest: Dict[str, Any]) -> Dict[str, bool]:
    """Recompute every listed checksum; True where the file still matches."""
    results = {}
    for relative, digest in manifest.get("files", {}).items():
        path = Path(out_dir) / relative
        results[relative] = path.exists() and sha256_bytes(path.read_bytes()) == digest
    return results
