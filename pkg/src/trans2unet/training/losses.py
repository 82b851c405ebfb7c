"""Segmentation losses on predicted foreground probabilities."""

import logging

from trans2unet.models.config import LossConfig
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

BCE_EPSILON = 1e-7


def _check_shapes(name: str, prob: Tensor, target: Tensor) -> None:
    if prob.shape != target.shape:
        raise ShapeError(f"{name}: prediction {prob.shape} and target {target.shape} differ")


def bce_loss(prob: Tensor, target: Tensor, eps: float = BCE_EPSILON) -> Tensor:
    """Binary cross-entropy ``−p·log q − (1−p)·log(1−q)``, averaged over pixels.

    ``q`` is clamped to ``[eps, 1 − eps]`` first.

    Args:
        prob: Predicted probabilities q
        target: Binary target p (no gradient needed)
        eps: Clamp margin

    Returns:
        Scalar loss tensor
    """
    _check_shapes("bce_loss", prob, target)
    q = ops.clip(prob, eps, 1.0 - eps)
    positive = ops.mul(target, ops.log(q))
    negative = ops.mul(1.0 - target, ops.log(1.0 - q))
    return ops.neg(ops.mean(ops.add(positive, negative)))


def dice_loss(prob: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """Soft Dice loss ``1 − (2Σpq + s) / (Σp + Σq + s)`` over all pixels.

    Example:
        >>> dice_loss(Tensor([0.5, 0.5]), Tensor([1.0, 0.0])).item()  # 1 - 2/3
        0.3333...
    """
    _check_shapes("dice_loss", prob, target)
    overlap = ops.shift(ops.scale(ops.sum(ops.mul(prob, target)), 2.0), smooth)
    total = ops.shift(ops.add(ops.sum(prob), ops.sum(target)), smooth)
    return 1.0 - ops.div(overlap, total)


def probability_loss(prob: Tensor, target: Tensor, config: LossConfig) -> Tensor:
    """Evaluate the configured loss on probabilities."""
    if config.kind == "bce":
        return bce_loss(prob, target, config.bce_epsilon)
    if config.kind == "dice":
        return dice_loss(prob, target, config.dice_smooth)
    return ops.add(
        bce_loss(prob, target, config.bce_epsilon), dice_loss(prob, target, config.dice_smooth)
    )


def segmentation_loss(logits: Tensor, target: Tensor, config: LossConfig) -> Tensor:
    """Apply the sigmoid to ``logits`` and evaluate the configured loss."""
    return probability_loss(ops.sigmoid(logits), target, config)
