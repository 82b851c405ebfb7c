"""Pydantic records exchanged between data, training and reporting."""

import hashlib
from typing import Any, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConfusionCounts(BaseModel):
    """Pixel tallies of a binarized prediction against a binary mask.

    Counts add up, so dataset-pooled (micro) metrics come from summing
    per-image counts.

    Example:
        >>> a = ConfusionCounts(tp=1, fp=1, fn=1, tn=1)
        >>> (a + a).tp
        2
    """

    model_config = ConfigDict(frozen=True)

    tp: int = Field(0, ge=0, description="True positives")
    fp: int = Field(0, ge=0, description="False positives")
    fn: int = Field(0, ge=0, description="False negatives")
    tn: int = Field(0, ge=0, description="True negatives")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )


class EpochRecord(BaseModel):
    """One row of the metrics log; ``lr`` is the rate used during the epoch."""

    epoch: int = Field(..., ge=1, description="1-based epoch index")
    train_loss: float = Field(..., description="Mean training loss")
    val_loss: float = Field(..., description="Mean validation loss")
    val_dsc: float = Field(..., description="Validation DSC (image mean)")
    val_iou: float = Field(..., description="Validation IoU (image mean)")
    lr: float = Field(..., description="Learning rate of the epoch")


class SegmentationSample(BaseModel):
    """Image/mask pair.

    ``image`` is float32 ``[C, H, W]`` in [0, 1]; ``mask`` is uint8
    ``[H, W]`` holding only 0 and 1.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str = Field(..., description="Sample identifier (file stem)")
    image: np.ndarray = Field(..., description="Image [C, H, W]")
    mask: np.ndarray = Field(..., description="Binary mask [H, W]")

    @field_validator("image")
    @classmethod
    def validate_image(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3:
            raise ValueError(f"image must be [C, H, W], got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        return np.ascontiguousarray(v, dtype=np.float32)

    @field_validator("mask")
    @classmethod
    def validate_mask(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2:
            raise ValueError(f"mask must be [H, W], got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask must be binary")
        return np.ascontiguousarray(v, dtype=np.uint8)

    @model_validator(mode="after")
    def validate_dims(self) -> "SegmentationSample":
        if self.image.shape[1:] != self.mask.shape:
            raise ValueError(
                f"image {self.image.shape} and mask {self.mask.shape} differ in spatial size"
            )
        return self

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]


class DatasetSplit(BaseModel):
    """Train/val/test partition of sample ids."""

    train: list[str] = Field(..., description="Training ids")
    val: list[str] = Field(..., description="Validation ids")
    test: list[str] = Field(..., description="Test ids")
    seed: int = Field(..., description="Seed the split was drawn with")

    @model_validator(mode="after")
    def validate_disjoint(self) -> "DatasetSplit":
        ids = self.train + self.val + self.test
        if len(set(ids)) != len(ids):
            raise ValueError("train, val and test must be disjoint")
        return self

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    @property
    def split_hash(self) -> str:
        """Short digest identifying the exact partition (order included)."""
        text = "|".join(",".join(part) for part in (self.train, self.val, self.test))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def ids(self, name: str) -> list[str]:
        """Ids of the split called ``name`` ("train", "val" or "test")."""
        if name not in ("train", "val", "test"):
            raise ValueError(f"Unknown split: {name!r}")
        return list(getattr(self, name))


class EvaluationReport(BaseModel):
    """Evaluation of one split: per-image table plus macro and micro aggregates.

    Macro aggregates average the per-image metrics; micro aggregates compute
    each metric once from the summed confusion counts.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    split: str = Field(..., description="Evaluated split name")
    mean_loss: float = Field(..., description="Mean loss over images")
    mean_dsc: float = Field(..., description="Macro-averaged DSC")
    mean_iou: float = Field(..., description="Macro-averaged IoU")
    macro: dict[str, float] = Field(default_factory=dict, description="Image-averaged metrics")
    micro: dict[str, float] = Field(default_factory=dict, description="Pooled-count metrics")
    counts: ConfusionCounts = Field(default_factory=ConfusionCounts, description="Pooled counts")
    per_image: pd.DataFrame = Field(..., description="One row per image")

    def aggregates(self) -> dict[str, Any]:
        """JSON-ready summary without the per-image table."""
        return {
            "split": self.split,
            "images": int(len(self.per_image)),
            "mean_loss": self.mean_loss,
            "mean_dsc": self.mean_dsc,
            "mean_iou": self.mean_iou,
            "macro": dict(self.macro),
            "micro": dict(self.micro),
            "counts": self.counts.model_dump(),
        }


class RunSummary(BaseModel):
    """Final numbers of a training run."""

    epochs: int = Field(..., description="Completed epochs")
    best_epoch: Optional[int] = Field(None, description="Epoch of the best validation DSC")
    best_val_dsc: float = Field(..., description="Best validation DSC")
    val_dsc: float = Field(..., description="Final-model validation DSC")
    val_iou: float = Field(..., description="Final-model validation IoU")
    test_dsc: float = Field(..., description="Final-model test DSC")
    test_iou: float = Field(..., description="Final-model test IoU")
    split_hash: str = Field(..., description="Digest of the data split")
    parameters: int = Field(..., description="Model parameter count")
