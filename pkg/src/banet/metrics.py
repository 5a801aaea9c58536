"""Pixel-level confusion counts and the five segmentation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    tp: int
    tn: int
    fp: int
    fn: int
    di: float
    ja: float
    ac: float
    se: float
    sp: float


def confusion(pred_prob: np.ndarray, gt: np.ndarray,
              threshold: float = 0.5) -> tuple[int, int, int, int]:
    """Count (tp, tn, fp, fn) over all pixels; prediction is prob >= threshold."""
    if pred_prob.shape != gt.shape:
        raise ValueError(f"confusion: shape mismatch {pred_prob.shape} vs {gt.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("confusion: ground truth must be binary (0/1)")
    pred = pred_prob >= threshold
    pos = gt == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return tp, tn, fp, fn


def _ratio(num: float, den: float) -> float:
    # empty set vs empty set is perfect agreement
    return num / den if den > 0 else 1.0


def metrics(tp: int, tn: int, fp: int, fn: int) -> MetricReport:
    """Dice, Jaccard, accuracy, sensitivity and specificity from counts."""
    if min(tp, tn, fp, fn) < 0:
        raise ValueError("metrics: counts must be non-negative")
    return MetricReport(
        tp=tp, tn=tn, fp=fp, fn=fn,
        di=_ratio(2.0 * tp, 2.0 * tp + fn + fp),
        ja=_ratio(tp, tp + fn + fp),
        ac=_ratio(tp + tn, tp + fp + tn + fn),
        se=_ratio(tp, tp + fn),
        sp=_ratio(tn, tn + fp),
    )


EVAL_HEADER = ["image_id", "tp", "tn", "fp", "fn", "di", "ja", "ac", "se", "sp"]

_METRIC_FIELDS = ("di", "ja", "ac", "se", "sp")


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Dataset-level score: the mean of per-image metrics (counts averaged too)."""
    if not reports:
        raise ValueError("mean_report: no per-image reports")
    n = len(reports)
    mean = lambda f: sum(getattr(r, f) for r in reports) / n
    return MetricReport(tp=mean("tp"), tn=mean("tn"), fp=mean("fp"), fn=mean("fn"),
                        di=mean("di"), ja=mean("ja"), ac=mean("ac"),
                        se=mean("se"), sp=mean("sp"))


def write_eval_csv(path, rows: list[tuple[str, MetricReport]]) -> MetricReport:
    """Write one row per image plus a final MEAN row; returns the mean report."""
    overall = mean_report([r for _, r in rows])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVAL_HEADER)
        for image_id, r in rows:
            writer.writerow([image_id, r.tp, r.tn, r.fp, r.fn]
                            + [f"{getattr(r, m):.9f}" for m in _METRIC_FIELDS])
        writer.writerow(["MEAN", overall.tp, overall.tn, overall.fp, overall.fn]
                        + [f"{getattr(overall, m):.9f}" for m in _METRIC_FIELDS])
    return overall


def read_eval_csv(path) -> tuple[list[dict], dict]:
    """Read an evaluation CSV back; returns (per-image rows, MEAN row)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows or rows[-1]["image_id"] != "MEAN":
        raise ValueError(f"{path}: missing MEAN row")
    return rows[:-1], rows[-1]
