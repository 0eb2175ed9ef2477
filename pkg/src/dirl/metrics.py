"""Per-image AP, F-measure and IoU, averaged over a dataset.

Predictions are binarised with ``pred >= threshold``. Average precision sweeps
the 256 thresholds n/255 from high to low, so recall is non-decreasing along
the sweep, and sums recall increments weighted by the precision reached at
the end of each increment. The sweep starts from an empty prediction
(recall 0) and ends at threshold 0, where every pixel is positive (recall 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .types import MetricReport

AP_LEVELS = 256


class EmptyGroundTruth(ValueError):
    pass


def _as_2d(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    while x.ndim > 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 2:
        raise ValueError(f"expected a single-channel mask, got shape {x.shape}")
    return x


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_2d(pred), _as_2d(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("ground truth must be binary")
    return p, g.astype(bool)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0


def confusion(pred, gt, threshold: float = 0.5) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    hit = p >= threshold
    return ConfusionCounts(
        tp=int(np.sum(hit & g)),
        fp=int(np.sum(hit & ~g)),
        fn=int(np.sum(~hit & g)),
        tn=int(np.sum(~hit & ~g)),
    )


def ap_thresholds() -> np.ndarray:
    """Sweep thresholds in summation order: 255/255, 254/255, ..., 0/255."""
    return np.arange(AP_LEVELS - 1, -1, -1) / (AP_LEVELS - 1)


def precision_recall_curve(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at each sweep threshold (recall non-decreasing)."""
    p, g = _pair(pred, gt)
    n_pos = int(g.sum())
    if n_pos == 0:
        raise EmptyGroundTruth("average precision is undefined for an empty ground-truth mask")
    thr = ap_thresholds()
    pos = np.sort(p[g])
    neg = np.sort(p[~g])
    tp = pos.size - np.searchsorted(pos, thr, side="left")
    fp = neg.size - np.searchsorted(neg, thr, side="left")
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos
    return precision, recall


def average_precision(pred, gt) -> float:
    precision, recall = precision_recall_curve(pred, gt)
    steps = np.diff(recall, prepend=0.0)
    return float(np.sum(steps * precision))


def f_measure(pred, gt, beta: float = 1.0, threshold: float = 0.5) -> float:
    cc = confusion(pred, gt, threshold)
    if cc.tp + cc.fn == 0:
        return 1.0 if cc.fp == 0 else 0.0
    p, r = cc.precision, cc.recall
    b2 = beta * beta
    denom = b2 * p + r
    return (1 + b2) * p * r / denom if denom > 0 else 0.0


def iou(pred, gt, threshold: float = 0.5) -> float:
    cc = confusion(pred, gt, threshold)
    union = cc.tp + cc.fp + cc.fn
    return cc.tp / union if union else 1.0


def image_metrics(pred, gt, threshold: float = 0.5) -> tuple[float, float, float]:
    return average_precision(pred, gt), f_measure(pred, gt, 1.0, threshold), iou(pred, gt, threshold)


def evaluate_dataset(preds: Sequence, gts: Sequence, ids: Sequence[str] | None = None,
                     threshold: float = 0.5) -> MetricReport:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    if not preds:
        raise ValueError("cannot evaluate an empty dataset")
    per_image = tuple(image_metrics(p, g, threshold) for p, g in zip(preds, gts))
    return MetricReport(per_image=per_image, ids=tuple(ids or ()), threshold=threshold)


def write_metrics_csv(report: MetricReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "ap", "f1", "iou"])
        for image_id, ap, f1, jac in report.rows():
            w.writerow([image_id, repr(ap), repr(f1), repr(jac)])
        w.writerow(["mean", repr(report.ap), repr(report.f1), repr(report.iou)])
    return path


def read_metrics_csv(path: str | Path) -> MetricReport:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["image_id", "ap", "f1", "iou"]:
        raise ValueError(f"{path}: not a metrics CSV")
    body = [r for r in rows[1:] if r and r[0] != "mean"]
    return MetricReport(
        per_image=tuple(tuple(float(v) for v in r[1:]) for r in body),
        ids=tuple(r[0] for r in body),
    )
