"""Cross-validation summaries, mask-ratio ablation tables and their rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .reference import INIT_ORDER, INIT_ROW_NAMES, MASK_RATIO_RESULTS, TEETH_AND_RESTORATION_RESULTS, TEETH_RESULTS

EMPTY_CELL = "—"
METRICS = ("AP_box", "AP_mask")


@dataclass
class EvalReport:
    """Per-run metric values (fractions in [0, 1]) and their mean / population std."""
    runs: list[dict]
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    per_fold: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"runs": self.runs, "mean": self.mean, "std": self.std, "per_fold": self.per_fold}


def _stats(values: Sequence[Optional[float]]) -> tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def cross_val_report(runs: Sequence[Mapping], per_fold: Sequence = ()) -> EvalReport:
    """Aggregate metric dicts of repeated runs (mean and population std)."""
    if not runs:
        raise ValueError("cross_val_report needs at least one run")
    keys = sorted({k for r in runs for k in r})
    mean, std = {}, {}
    for k in keys:
        mean[k], std[k] = _stats([r.get(k) for r in runs])
    return EvalReport([dict(r) for r in runs], mean, std, list(per_fold))


def pct(v: Optional[float], digits: int = 1) -> str:
    return EMPTY_CELL if v is None else f"{100.0 * v:.{digits}f}"


def init_table(reports: Mapping[str, EvalReport], with_restorations: bool = False) -> list[dict]:
    """Rows in the Random / Supervised / UM-MAE / SimMIM order with published values attached."""
    published = TEETH_AND_RESTORATION_RESULTS if with_restorations else TEETH_RESULTS
    rows = []
    for mode in INIT_ORDER:
        rep = reports.get(mode)
        name = INIT_ROW_NAMES[mode]
        ref = published.get(name)
        rows.append({
            "init": name,
            "AP_box": None if rep is None else rep.mean.get("AP_box"),
            "AP_box_std": None if rep is None else rep.std.get("AP_box"),
            "AP_mask": None if rep is None else rep.mean.get("AP_mask"),
            "AP_mask_std": None if rep is None else rep.std.get("AP_mask"),
            "published_AP_box": None if ref is None else ref[0],
            "published_AP_mask": None if ref is None else ref[1],
        })
    return rows


def render_init_table(rows: Sequence[Mapping]) -> str:
    lines = ["| Init | AP_box | AP_mask | AP_box (published) | AP_mask (published) |",
             "|---|---|---|---|---|"]
    for r in rows:
        def cell(m):
            if r[m] is None:
                return EMPTY_CELL
            s = r.get(m + "_std")
            return pct(r[m]) + ("" if s is None else f" ± {100 * s:.1f}")
        pub = [EMPTY_CELL if r[k] is None else f"{r[k]:.1f}" for k in ("published_AP_box", "published_AP_mask")]
        lines.append(f"| {r['init']} | {cell('AP_box')} | {cell('AP_mask')} | {pub[0]} | {pub[1]} |")
    return "\n".join(lines) + "\n"


def init_table_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    cols = ["init", "AP_box", "AP_box_std", "AP_mask", "AP_mask_std", "published_AP_box", "published_AP_mask"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r[c], c) for c in cols])
    return buf.getvalue()


def _cell(v, col: str) -> str:
    if v is None:
        return EMPTY_CELL
    if isinstance(v, str):
        return v
    if col.startswith("published"):
        return f"{v:.1f}"
    return f"{100.0 * v:.2f}"


def ablation_report(results: Mapping[tuple, Optional[EvalReport]]) -> list[dict]:
    """``results`` maps (mask ratio, epochs) to an :class:`EvalReport` (or None when not run)."""
    if len(results) < 2:
        raise ValueError("an ablation needs at least two settings")
    rows = []
    for (ratio, epochs) in sorted(results, key=lambda k: (-k[0], k[1])):
        rep = results[(ratio, epochs)]
        ref = MASK_RATIO_RESULTS.get((int(round(100 * ratio)), int(epochs)))
        rows.append({
            "ratio": ratio, "epochs": int(epochs),
            "AP_box": None if rep is None else rep.mean.get("AP_box"),
            "AP_mask": None if rep is None else rep.mean.get("AP_mask"),
            "published_AP_box": None if ref is None else ref[0],
            "published_AP_mask": None if ref is None else ref[1],
        })
    return rows


def ablation_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ratio", "epochs", "AP_box", "AP_mask", "published_AP_box", "published_AP_mask"])
    for r in rows:
        w.writerow([f"{int(round(100 * r['ratio']))}%", r["epochs"]]
                   + [_cell(r[c], c) for c in ("AP_box", "AP_mask", "published_AP_box", "published_AP_mask")])
    return buf.getvalue()


def reference_ablation_rows() -> list[dict]:
    return [{"ratio": r / 100, "epochs": e, "AP_box": None, "AP_mask": None,
             "published_AP_box": v[0], "published_AP_mask": v[1]}
            for (r, e), v in sorted(MASK_RATIO_RESULTS.items(), key=lambda kv: (-kv[0][0], kv[0][1]))]
