"""Synthetic nuclei-like images for desk-scale experiments.

Each image is a dark, noisy background with one to five bright ellipses
that may overlap; the mask is the union of the exact ellipse interiors.
"""

import logging

import numpy as np

from trans2unet.models.records import SegmentationSample
from trans2unet.utils.exceptions import ValidationError
from trans2unet.utils.random import stream

logger = logging.getLogger(__name__)

MAX_ELLIPSES = 5
BACKGROUND = 0.1
NOISE_STD = 0.05


def _ellipse(size: int, rng: np.random.Generator) -> np.ndarray:
    margin = max(1, size // 8)
    cy, cx = rng.integers(margin, size - margin, size=2)
    a, b = rng.uniform(size / 16, size / 5, size=2)
    angle = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    # integer centre: the centre pixel is always inside
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_synthetic(
    n: int, size: int, seed: int, channels: int = 1
) -> list[SegmentationSample]:
    """Generate ``n`` samples of side ``size`` from the ``synth`` stream of ``seed``.

    Args:
        n: Number of samples
        size: Image side (divisible by 16)
        seed: Run seed
        channels: Image channels (1 or 3)

    Returns:
        Samples ``synth_0000`` ... in id order

    Raises:
        ValidationError: If size is not a positive multiple of 16 or n < 1

    Example:
        >>> samples = generate_synthetic(8, 32, seed=7)
        >>> samples[0].mask.sum() > 0
        True
    """
    if n < 1:
        raise ValidationError(f"Number of synthetic samples must be positive, got {n}")
    if size < 16 or size % 16:
        raise ValidationError(f"Synthetic image size must be a positive multiple of 16, got {size}")
    if channels not in (1, 3):
        raise ValidationError(f"Synthetic images have 1 or 3 channels, got {channels}")

    rng = stream(seed, "synth")
    samples = []
    for index in range(n):
        mask = np.zeros((size, size), dtype=bool)
        intensity = np.full((size, size), BACKGROUND)
        for _ in range(int(rng.integers(1, MAX_ELLIPSES + 1))):
            inside = _ellipse(size, rng)
            mask |= inside
            intensity = np.where(inside, np.maximum(intensity, rng.uniform(0.6, 0.9)), intensity)
        intensity = intensity + rng.normal(0.0, NOISE_STD, size=(size, size))
        tint = rng.uniform(0.8, 1.0, size=channels)
        image = np.clip(intensity[None] * tint[:, None, None], 0.0, 1.0)
        samples.append(
            SegmentationSample(id=f"synth_{index:04d}", image=image, mask=mask.astype(np.uint8))
        )

    logger.info(f"Generated {n} synthetic {size}x{size} samples (seed {seed})")
    return samples
