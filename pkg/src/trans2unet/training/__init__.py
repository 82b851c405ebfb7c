"""Losses, metrics, optimizer and the training loop."""

from trans2unet.training.engine import build_report, evaluate, predict_probabilities, train
from trans2unet.training.losses import bce_loss, dice_loss, probability_loss, segmentation_loss
from trans2unet.training.metrics import (
    METRICS,
    accuracy,
    confusion_counts,
    dsc,
    iou,
    metric_values,
    precision,
    recall,
    volumetric_similarity,
)
from trans2unet.training.optim import Adam, PlateauScheduler
from trans2unet.training.state import TrainState

__all__ = [
    "METRICS",
    "Adam",
    "PlateauScheduler",
    "TrainState",
    "accuracy",
    "bce_loss",
    "build_report",
    "confusion_counts",
    "dice_loss",
    "dsc",
    "evaluate",
    "iou",
    "metric_values",
    "precision",
    "predict_probabilities",
    "probability_loss",
    "recall",
    "segmentation_loss",
    "train",
    "volumetric_similarity",
]
