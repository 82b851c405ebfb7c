"""Confusion counts and overlap metrics for binary masks.

All metrics are pure functions of ``ConfusionCounts``. When a ratio is 0/0
(the prediction and the mask agree on being empty) it is defined as 1.0.
"""

from typing import Union

import numpy as np

from trans2unet.models.records import ConfusionCounts
from trans2unet.tensor import Tensor
from trans2unet.utils.exceptions import ShapeError

THRESHOLD = 0.5

ArrayOrTensor = Union[np.ndarray, Tensor]


def _array(value: ArrayOrTensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def confusion_counts(
    prob: ArrayOrTensor, target: ArrayOrTensor, threshold: float = THRESHOLD
) -> ConfusionCounts:
    """Tally a prediction binarized at ``threshold`` (``>=`` is positive) against a mask.

    Args:
        prob: Predicted probabilities
        target: Binary ground truth, same shape

    Returns:
        ConfusionCounts over every element

    Raises:
        ShapeError: If the shapes differ
    """
    q, p = _array(prob), _array(target)
    if q.shape != p.shape:
        raise ShapeError(f"confusion_counts: prediction {q.shape} and target {p.shape} differ")
    predicted = q >= threshold
    actual = p > 0.5
    tp = int(np.count_nonzero(predicted & actual))
    fp = int(np.count_nonzero(predicted & ~actual))
    fn = int(np.count_nonzero(~predicted & actual))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=int(q.size) - tp - fp - fn)


def _ratio(numerator: int, denominator: int) -> float:
    return 1.0 if denominator == 0 else numerator / denominator


def dsc(c: ConfusionCounts) -> float:
    """Dice similarity coefficient ``2TP / (2TP + FP + FN)``."""
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def iou(c: ConfusionCounts) -> float:
    """Intersection over union ``TP / (TP + FP + FN)``."""
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def volumetric_similarity(c: ConfusionCounts) -> float:
    """``1 − |FN − FP| / (2TP + FP + FN)``."""
    denominator = 2 * c.tp + c.fp + c.fn
    return 1.0 if denominator == 0 else 1.0 - abs(c.fn - c.fp) / denominator


METRICS = {
    "dsc": dsc,
    "iou": iou,
    "precision": precision,
    "recall": recall,
    "accuracy": accuracy,
    "volumetric_similarity": volumetric_similarity,
}


def metric_values(c: ConfusionCounts) -> dict[str, float]:
    """Every metric of ``METRICS`` evaluated on ``c``."""
    return {name: fn(c) for name, fn in METRICS.items()}
