"""Segmentation metrics over a K x K confusion matrix (rows = ground truth, cols = prediction)."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.errors import DataError, DimensionError
from app.services.data_pipeline import IGNORE_LABEL

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise DimensionError(f"Confusion matrix must be {self.num_classes}x{self.num_classes}, got {self.counts.shape}")

    def add(self, labels: np.ndarray, preds: np.ndarray) -> "ConfusionMatrix":
        """Accumulate one label/prediction pair; ignore-label pixels are skipped."""
        labels = np.asarray(labels).reshape(-1).astype(np.int64)
        preds = np.asarray(preds).reshape(-1).astype(np.int64)
        if labels.shape != preds.shape:
            raise DimensionError(f"Labels {labels.shape} and predictions {preds.shape} differ in size")
        keep = labels != IGNORE_LABEL
        labels, preds = labels[keep], preds[keep]
        k = self.num_classes
        if labels.size and (labels.min() < 0 or labels.max() >= k or preds.min() < 0 or preds.max() >= k):
            raise DataError(f"Label or prediction outside [0, {k})")
        self.counts += np.bincount(k * labels + preds, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def per_class_iou(cm: ConfusionMatrix) -> List[Optional[float]]:
    """IoU per class; ``None`` where the class is absent from both labels and predictions."""
    tp = np.diag(cm.counts)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - tp
    return [float(tp[k]) / float(union[k]) if union[k] > 0 else None for k in range(cm.num_classes)]


def miou(cm: ConfusionMatrix) -> Tuple[float, List[Optional[float]]]:
    """Mean IoU over classes with a nonzero denominator, plus the per-class list."""
    ious = per_class_iou(cm)
    valid = [v for v in ious if v is not None]
    if not valid:
        logger.warning("mIoU requested on an empty confusion matrix")
        return 0.0, ious
    return sum(valid) / len(valid), ious


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    return float(np.trace(cm.counts)) / total if total else 0.0


def argmax_prediction(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis (axis 0); ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=0).astype(np.int64)


def format_iou(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"
