"""Flip augmentation applied identically to image and mask."""

import numpy as np

from trans2unet.models.records import SegmentationSample


def flip_horizontal(sample: SegmentationSample) -> SegmentationSample:
    """Mirror left-right."""
    return SegmentationSample(
        id=sample.id, image=sample.image[:, :, ::-1].copy(), mask=sample.mask[:, ::-1].copy()
    )


def flip_vertical(sample: SegmentationSample) -> SegmentationSample:
    """Mirror top-bottom."""
    return SegmentationSample(
        id=sample.id, image=sample.image[:, ::-1, :].copy(), mask=sample.mask[::-1, :].copy()
    )


def augment_flip(sample: SegmentationSample, rng: np.random.Generator) -> SegmentationSample:
    """Flip horizontally and vertically, each with probability 0.5.

    Both coins are always drawn, so the stream advances by two values per call.
    """
    horizontal, vertical = rng.random(2) < 0.5
    if horizontal:
        sample = flip_horizontal(sample)
    if vertical:
        sample = flip_vertical(sample)
    return sample
