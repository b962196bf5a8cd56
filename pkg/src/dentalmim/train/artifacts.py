"""Run directories: lock, resolved config, metrics CSV and JSON manifest."""

from __future__ import annotations

import csv
import io
import json
import os
import subprocess
from pathlib import Path

from filelock import FileLock, Timeout

from ..errors import DentalMimError

METRIC_COLUMNS = ("epoch", "split", "loss", "AP_box", "AP_mask")
OUTPUT_ROOT_ENV = "DENTALMIM_OUTPUT_ROOT"
# manifest fields that legitimately differ between otherwise identical runs
VOLATILE_KEYS = ("wall_time_s",)


class RunBusy(DentalMimError):
    pass


def git_revision(path: os.PathLike | None = None) -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=path or Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def write_json(path: os.PathLike, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


class RunDir:
    """Owns one output directory for the lifetime of a ``with`` block."""

    def __init__(self, path: os.PathLike):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path / ".lock"))

    def __enter__(self) -> "RunDir":
        try:
            self._lock.acquire(timeout=0)
        except Timeout as exc:
            raise RunBusy(f"run directory {self.path} is in use by another process") from exc
        return self

    def __exit__(self, *exc):
        self._lock.release()

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.file(name)
        write_json(p, obj)
        return p

    def write_metrics(self, rows, name: str = "metrics.csv") -> Path:
        p = self.file(name)
        p.write_text(metrics_csv(rows))
        return p

    def write_manifest(self, command: str, config: dict, seed, wall_time_s: float, **extra) -> Path:
        doc = {"command": command, "config": config, "seed": seed, "git_revision": git_revision(),
               "wall_time_s": round(float(wall_time_s), 3), **extra}
        return self.write_json("manifest.json", doc)


def stable_manifest(path: os.PathLike) -> dict:
    """Manifest contents without the volatile timing fields."""
    with open(path) as fh:
        doc = json.load(fh)
    for k in VOLATILE_KEYS:
        doc.pop(k, None)
    return doc
