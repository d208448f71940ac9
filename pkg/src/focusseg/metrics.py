"""Confusion-matrix segmentation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .losses import IGNORE_INDEX, boundary_map

BAND_RADIUS = 2


def confusion_matrix(pred, gt, num_classes: int, ignore_index: int = IGNORE_INDEX,
                     where: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows are ground truth, columns are predictions. Ignore pixels are skipped."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    keep = (gt != ignore_index) & (gt >= 0) & (gt < num_classes)
    if where is not None:
        keep &= where
    idx = num_classes * gt[keep].astype(np.int64) + np.clip(pred[keep].astype(np.int64), 0, num_classes - 1)
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> np.ndarray:
    """Per-class IoU; NaN for classes absent from both prediction and ground truth."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / np.maximum(union, 1), np.nan)


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else float("nan")


@dataclass
class Metrics:
    per_class_iou: np.ndarray
    miou: float
    band_per_class_iou: np.ndarray
    band_miou: float
    pixel_accuracy: float

    def to_dict(self) -> dict:
        def clean(arr):
            return [None if np.isnan(v) else float(v) for v in arr]

        return {
            "miou": self.miou,
            "band_miou": self.band_miou,
            "pixel_accuracy": self.pixel_accuracy,
            "per_class_iou": clean(self.per_class_iou),
            "band_per_class_iou": clean(self.band_per_class_iou),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self, class_names: Optional[List[str]] = None) -> str:
        names = class_names or [f"class {c}" for c in range(len(self.per_class_iou))]
        fmt = lambda v: "   -  " if np.isnan(v) else f"{100 * v:6.2f}"
        lines = [f"{'class':<12} {'IoU':>6} {'band':>6}"]
        for name, a, b in zip(names, self.per_class_iou, self.band_per_class_iou):
            lines.append(f"{name:<12} {fmt(a)} {fmt(b)}")
        lines.append(f"{'mIoU':<12} {fmt(self.miou)} {fmt(self.band_miou)}")
        lines.append(f"{'pixel acc':<12} {fmt(self.pixel_accuracy)}")
        return "\n".join(lines)


class MetricAccumulator:
    """Accumulates global and boundary-band confusion matrices over a dataset."""

    def __init__(self, num_classes: int, ignore_index: int = IGNORE_INDEX, band_radius: int = BAND_RADIUS):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.band_radius = band_radius
        self.cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.band_cm = np.zeros_like(self.cm)

    def update(self, pred, gt):
        pred, gt = np.asarray(pred), np.asarray(gt)
        self.cm += confusion_matrix(pred, gt, self.num_classes, self.ignore_index)
        band = boundary_map(gt, self.band_radius, ignore_index=self.ignore_index) > 0
        self.band_cm += confusion_matrix(pred, gt, self.num_classes, self.ignore_index, where=band)

    def result(self) -> Metrics:
        iou = iou_from_confusion(self.cm)
        band = iou_from_confusion(self.band_cm)
        total = self.cm.sum()
        acc = float(np.trace(self.cm) / total) if total else float("nan")
        return Metrics(iou, _nanmean(iou), band, _nanmean(band), acc)


def compute_miou(pred, gt, num_classes: int, ignore_index: int = IGNORE_INDEX,
                 band_radius: int = BAND_RADIUS) -> Metrics:
    """IoU_c = TP / (TP + FP + FN); classes absent from both maps are left out
    of the mean. The band metrics only count pixels within ``band_radius`` of a
    ground-truth label transition."""
    acc = MetricAccumulator(num_classes, ignore_index, band_radius)
    acc.update(pred, gt)
    return acc.result()
