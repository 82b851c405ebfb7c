"""Epoch loop and evaluation."""

import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from trans2unet.checkpoint import save_checkpoint
from trans2unet.data import augment_flip, stack_batch
from trans2unet.models.config import LossConfig, RunConfig
from trans2unet.models.records import (
    ConfusionCounts,
    EpochRecord,
    EvaluationReport,
    SegmentationSample,
)
from trans2unet.nn import Module
from trans2unet.processors.csv import append_csv_row
from trans2unet.tensor import Tensor, no_grad, ops
from trans2unet.training.losses import probability_loss, segmentation_loss
from trans2unet.training.metrics import confusion_counts, metric_values
from trans2unet.training.state import TrainState
from trans2unet.utils.exceptions import DatasetError, NumericalError, ValidationError
from trans2unet.utils.random import stream

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
BEST_CHECKPOINT = "best.ckpt"
FINAL_CHECKPOINT = "final.ckpt"
EVAL_BATCH = 8


def predict_probabilities(model: Module, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Foreground probabilities ``[N, 1, H, W]`` for images ``[N, C, H, W]``.

    Runs without recording a graph, in whatever mode the model is in.
    """
    outputs = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = model(Tensor(images[start : start + batch_size]))
            outputs.append(ops.sigmoid(logits).data)
    return np.concatenate(outputs, axis=0)


def build_report(
    split: str,
    ids: Sequence[str],
    counts: Sequence[ConfusionCounts],
    losses: Sequence[float],
) -> EvaluationReport:
    """Assemble the per-image table and the macro/micro aggregates.

    Macro values average the per-image metrics; micro values are computed
    once from the summed counts.
    """
    if not ids:
        raise DatasetError(f"Cannot evaluate the empty '{split}' split")
    rows = []
    for sample_id, c, loss in zip(ids, counts, losses):
        rows.append({"id": sample_id, "loss": loss, **metric_values(c), **c.model_dump()})
    per_image = pd.DataFrame(rows)

    pooled = sum(counts, ConfusionCounts())
    metric_names = list(metric_values(pooled))
    macro = {name: float(per_image[name].mean()) for name in metric_names}
    return EvaluationReport(
        split=split,
        mean_loss=float(np.mean(losses)),
        mean_dsc=macro["dsc"],
        mean_iou=macro["iou"],
        macro=macro,
        micro=metric_values(pooled),
        counts=pooled,
        per_image=per_image,
    )


def evaluate(
    model: Module,
    samples: Sequence[SegmentationSample],
    loss_config: LossConfig,
    split: str = "test",
    batch_size: int = EVAL_BATCH,
) -> EvaluationReport:
    """Evaluate ``model`` in eval mode on ``samples``.

    Args:
        model: Trained model (switched to eval mode)
        samples: Samples of the split
        loss_config: Loss used for the per-image loss column
        split: Name recorded in the report

    Returns:
        EvaluationReport with per-image rows and macro / micro aggregates

    Raises:
        DatasetError: If ``samples`` is empty
    """
    if not samples:
        raise DatasetError(f"Cannot evaluate the empty '{split}' split")
    model.eval()
    images, masks = stack_batch(samples)
    probs = predict_probabilities(model, images, batch_size)

    counts, losses = [], []
    with no_grad():
        for prob, mask in zip(probs, masks):
            counts.append(confusion_counts(prob, mask))
            losses.append(probability_loss(Tensor(prob), Tensor(mask), loss_config).item())
    report = build_report(split, [s.id for s in samples], counts, losses)
    logger.info(
        f"Evaluated {len(samples)} '{split}' images: DSC {report.mean_dsc:.4f}, "
        f"IoU {report.mean_iou:.4f}, loss {report.mean_loss:.4f}"
    )
    return report


def _train_epoch(
    state: TrainState,
    samples: Sequence[SegmentationSample],
    shuffle_rng: np.random.Generator,
    augment_rng: np.random.Generator,
) -> float:
    config = state.config
    model = state.model
    model.train()
    order = shuffle_rng.permutation(len(samples))
    total, seen = 0.0, 0
    for start in range(0, len(order), config.train.batch_size):
        batch = [samples[i] for i in order[start : start + config.train.batch_size]]
        if config.train.augment:
            batch = [augment_flip(sample, augment_rng) for sample in batch]
        images, masks = stack_batch(batch)

        state.optimizer.zero_grad()
        loss = segmentation_loss(model(Tensor(images)), Tensor(masks), config.loss)
        value = loss.item()
        if not math.isfinite(value):
            logger.error(f"Non-finite training loss at epoch {state.epoch + 1}")
            raise NumericalError(f"Training loss became {value} at epoch {state.epoch + 1}")
        loss.backward()
        state.optimizer.step()
        total += value * len(batch)
        seen += len(batch)
        logger.debug(f"Epoch {state.epoch + 1} batch loss {value:.6f}")
    return total / seen


def train(
    model: Module,
    train_samples: Sequence[SegmentationSample],
    val_samples: Sequence[SegmentationSample],
    config: RunConfig,
    out_dir: Optional[Path] = None,
    state: Optional[TrainState] = None,
) -> TrainState:
    """Train ``model`` for ``config.train.epochs`` epochs.

    Each epoch shuffles the training samples (``shuffle`` stream), optionally
    flips them (``augment`` stream), runs mini-batch Adam steps in train
    mode, evaluates the validation samples in eval mode, and steps the
    plateau scheduler on the validation loss. With ``out_dir`` set, every
    epoch appends a row to ``metrics.csv``, a new best validation DSC writes
    ``best.ckpt``, and the last epoch writes ``final.ckpt``.

    Passing ``state`` (see ``Checkpoint.build_state``) resumes a run: epochs
    continue from ``state.epoch`` with the restored optimizer and scheduler,
    and ``metrics.csv`` is appended to. The random streams restart from the
    seed, so a resumed run is reproducible but not bit-identical to an
    uninterrupted one.

    Args:
        model: Freshly built model, or ``state.model`` when resuming
        train_samples: Training samples
        val_samples: Validation samples
        config: Run configuration
        out_dir: Output directory (None keeps everything in memory)
        state: Training state to resume from

    Returns:
        Final TrainState with one EpochRecord per epoch run by this call

    Raises:
        DatasetError: If either sample list is empty
        NumericalError: If the loss or a gradient becomes non-finite
        ValidationError: If ``state`` belongs to another model
    """
    if not train_samples:
        raise DatasetError("Training split is empty")
    if not val_samples:
        raise DatasetError("Validation split is empty")

    if state is None:
        state = TrainState(model, config)
        resumed = False
    elif state.model is not model:
        raise ValidationError("Resumed training state belongs to a different model")
    else:
        state.config = config
        resumed = True
    shuffle_rng = stream(config.seed, "shuffle")
    augment_rng = stream(config.seed, "augment")
    model.set_dropout_rng(stream(config.seed, "dropout"))
    metrics_path = Path(out_dir) / METRICS_FILE if out_dir is not None else None
    if metrics_path is not None:
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        if not resumed:
            metrics_path.unlink(missing_ok=True)

    logger.info(
        f"Training epochs {state.epoch + 1}..{config.train.epochs} on {len(train_samples)} samples "
        f"(validation {len(val_samples)})"
    )
    while state.epoch < config.train.epochs:
        lr = state.optimizer.lr
        train_loss = _train_epoch(state, train_samples, shuffle_rng, augment_rng)
        report = evaluate(model, val_samples, config.loss, split="val")
        state.epoch += 1
        state.optimizer.lr = state.scheduler.step(report.mean_loss)

        record = EpochRecord(
            epoch=state.epoch,
            train_loss=train_loss,
            val_loss=report.mean_loss,
            val_dsc=report.mean_dsc,
            val_iou=report.mean_iou,
            lr=lr,
        )
        state.records.append(record)
        if report.mean_dsc > state.best_val_dsc:
            state.best_val_dsc = report.mean_dsc
            state.best_epoch = state.epoch
            if out_dir is not None:
                save_checkpoint(Path(out_dir) / BEST_CHECKPOINT, model, config, state)
        if metrics_path is not None:
            append_csv_row(metrics_path, record.model_dump())
        logger.info(
            f"Epoch {state.epoch}: train_loss {train_loss:.4f} val_loss {report.mean_loss:.4f} "
            f"val_dsc {report.mean_dsc:.4f} lr {lr:.3g}"
        )

    if out_dir is not None:
        save_checkpoint(Path(out_dir) / FINAL_CHECKPOINT, model, config, state)
    return state
