"""Precision and success curves for single-target tracking."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRECISION_THRESHOLDS = np.arange(51, dtype=float)
SUCCESS_THRESHOLDS = np.arange(101) / 100.0


@dataclass
class Curve:
    name: str
    thresholds: np.ndarray
    values: np.ndarray
    summary: dict = field(default_factory=dict)


def _pair(results, gt):
    a = np.asarray(results, dtype=float).reshape(-1, 4)
    b = np.asarray(gt, dtype=float).reshape(-1, 4)
    if len(a) != len(b):
        raise ValueError(f"results have {len(a)} frames but ground truth has {len(b)}")
    if len(a) == 0:
        raise ValueError("no frames to evaluate")
    return a, b


def center_errors(results, gt) -> np.ndarray:
    a, b = _pair(results, gt)
    ca = a[:, :2] + a[:, 2:] / 2
    cb = b[:, :2] + b[:, 2:] / 2
    return np.hypot(*(ca - cb).T)


def overlaps(results, gt) -> np.ndarray:
    """Jaccard overlap of axis-aligned ``(x, y, w, h)`` boxes."""
    a, b = _pair(results, gt)
    ix = np.maximum(0.0, np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0]))
    iy = np.maximum(0.0, np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1]))
    inter = ix * iy
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def precision_curve(results, gt, thresholds=PRECISION_THRESHOLDS) -> Curve:
    err = center_errors(results, gt)
    values = (err[None, :] <= np.asarray(thresholds)[:, None]).mean(axis=1)
    p20 = float(np.mean(err <= 20.0))
    return Curve("precision", np.asarray(thresholds, dtype=float), values,
                 {"precision_at_20": p20, "frames": int(len(err))})


def success_curve(results, gt, thresholds=SUCCESS_THRESHOLDS) -> Curve:
    """Fraction of frames with overlap ``>= tau`` on the inclusive grid.

    The AUC averages, over the same grid, the fraction with overlap strictly
    above each threshold (the benchmark-toolkit convention), so a perfect
    track scores ``100/101`` rather than 1.
    """
    s = overlaps(results, gt)
    th = np.asarray(thresholds, dtype=float)
    values = (s[None, :] >= th[:, None]).mean(axis=1)
    strict = (s[None, :] > th[:, None]).mean(axis=1)
    return Curve("success", th, values,
                 {"success_auc": float(strict.mean()), "frames": int(len(s))})


def curve_csv(curve: Curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "value"])
    for t, v in zip(curve.thresholds, curve.values):
        w.writerow([repr(float(t)), repr(float(v))])
    return buf.getvalue()


def curve_json(curve: Curve, metadata=None) -> str:
    doc = {
        "thresholds": [float(t) for t in curve.thresholds],
        "values": [float(v) for v in curve.values],
        "summary": dict(curve.summary),
    }
    if metadata:
        doc["metadata"] = metadata
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_curves(curves, out_dir, formats=("csv", "json"), metadata=None) -> list[Path]:
    """Write each curve as ``<name>.csv`` / ``<name>.json`` plus a combined ``summary.json``."""
    curves = list(curves)
    if not curves or any(len(c.values) == 0 for c in curves):
        raise ValueError("refusing to write empty curves")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {}
    for c in curves:
        summary.update(c.summary)
        if "csv" in formats:
            p = out / f"{c.name}.csv"
            p.write_text(curve_csv(c))
            written.append(p)
        if "json" in formats:
            p = out / f"{c.name}.json"
            p.write_text(curve_json(c, metadata))
            written.append(p)
    if metadata:
        summary["metadata"] = metadata
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def read_curve_csv(path) -> Curve:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    return Curve(Path(path).stem, np.array([float(r["threshold"]) for r in rows]),
                 np.array([float(r["value"]) for r in rows]))
