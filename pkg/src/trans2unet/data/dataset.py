"""Dataset ingestion, resizing, splitting and batching.

A dataset directory holds ``images/<id>.pgm|.ppm`` and ``masks/<id>.pgm``
with matching file stems. Images are scaled to [0, 1] and resized
bilinearly; masks are binarized (``> 127.5``) and resized with nearest
neighbour so they stay binary.
"""

import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from trans2unet.data.pnm import read_pnm, to_pixels, write_pnm
from trans2unet.models.records import DatasetSplit, SegmentationSample
from trans2unet.tensor import bilinear_weights
from trans2unet.utils.exceptions import DatasetError
from trans2unet.utils.random import stream

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".ppm")
MASK_THRESHOLD = 127.5


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of ``[C, H, W]`` to ``[C, size, size]`` (align-corners=false)."""
    _, H, W = image.shape
    if (H, W) == (size, size):
        return image.astype(np.float32)
    rows = bilinear_weights(H, size)
    cols = bilinear_weights(W, size)
    resized = np.einsum("ih,chw,jw->cij", rows, image.astype(np.float64), cols, optimize=True)
    return np.clip(resized, 0.0, 1.0).astype(np.float32)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of ``[H, W]`` to ``[size, size]``."""
    H, W = mask.shape
    rows = np.minimum(((np.arange(size) + 0.5) * H / size).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * W / size).astype(np.int64), W - 1)
    return mask[np.ix_(rows, cols)]


def _load_pair(image_path: Path, mask_path: Path, target_size: int) -> SegmentationSample:
    pixels = read_pnm(image_path)
    mask_pixels = read_pnm(mask_path)
    if mask_pixels.ndim != 2:
        raise DatasetError(f"Mask {mask_path} must be a grayscale PGM")
    if pixels.shape[:2] != mask_pixels.shape:
        raise DatasetError(
            f"Image {image_path.name} is {pixels.shape[1]}x{pixels.shape[0]} but its mask is "
            f"{mask_pixels.shape[1]}x{mask_pixels.shape[0]}"
        )
    image = pixels[None] if pixels.ndim == 2 else np.transpose(pixels, (2, 0, 1))
    image = image.astype(np.float32) / 255.0
    mask = (mask_pixels > MASK_THRESHOLD).astype(np.uint8)
    return SegmentationSample(
        id=image_path.stem,
        image=resize_image(image, target_size),
        mask=resize_mask(mask, target_size),
    )


def load_dataset(
    directory: Path, target_size: int, in_channels: Optional[int] = None
) -> list[SegmentationSample]:
    """Load every image/mask pair below ``directory``.

    Args:
        directory: Dataset root with ``images/`` and ``masks/``
        target_size: Output side length
        in_channels: Required image channels (None accepts any)

    Returns:
        Samples sorted by id

    Raises:
        DatasetError: If no image is found, a mask is missing, a file is
            unreadable, dimensions disagree or channels do not match

    Example:
        >>> samples = load_dataset(Path("data/dsb"), target_size=32)
    """
    directory = Path(directory)
    image_dir, mask_dir = directory / "images", directory / "masks"
    image_paths = (
        sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if image_dir.is_dir()
        else []
    )
    if not image_paths:
        raise DatasetError(f"Dataset {directory} is empty: no images under {image_dir}")

    stems = [p.stem for p in image_paths]
    if len(set(stems)) != len(stems):
        raise DatasetError(f"Dataset {directory} has several images with the same name")

    samples: list[SegmentationSample] = []
    for image_path in image_paths:
        mask_path = mask_dir / f"{image_path.stem}.pgm"
        if not mask_path.is_file():
            raise DatasetError(f"Missing mask for image {image_path.name}: expected {mask_path}")
        try:
            sample = _load_pair(image_path, mask_path, target_size)
        except PydanticValidationError as e:
            logger.error(f"Invalid sample {image_path.stem}: {e}")
            raise DatasetError(f"Invalid sample {image_path.stem}: {e}") from e
        if in_channels is not None and sample.image.shape[0] != in_channels:
            raise DatasetError(
                f"Image {image_path.name} has {sample.image.shape[0]} channels, "
                f"model expects {in_channels}"
            )
        samples.append(sample)

    samples.sort(key=lambda s: s.id)
    logger.info(f"Loaded {len(samples)} samples from {directory} at {target_size}x{target_size}")
    return samples


def save_dataset(samples: Sequence[SegmentationSample], directory: Path) -> None:
    """Write samples in the ingestion layout (PGM for 1 channel, PPM for 3)."""
    directory = Path(directory)
    for sample in samples:
        channels = sample.image.shape[0]
        if channels == 1:
            write_pnm(directory / "images" / f"{sample.id}.pgm", to_pixels(sample.image[0]))
        elif channels == 3:
            write_pnm(
                directory / "images" / f"{sample.id}.ppm",
                to_pixels(np.transpose(sample.image, (1, 2, 0))),
            )
        else:
            raise DatasetError(f"Cannot write {channels}-channel image {sample.id}")
        write_pnm(directory / "masks" / f"{sample.id}.pgm", sample.mask * np.uint8(255))
    logger.info(f"Wrote {len(samples)} samples to {directory}")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder split sizes, every split non-empty when ``n >= 3``.

    Example:
        >>> split_sizes(670, (0.8, 0.1, 0.1))
        (536, 67, 67)
    """
    raw = [r * n for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in raw]
    remainder = n - sum(sizes)
    by_fraction = sorted(range(3), key=lambda i: -(raw[i] - sizes[i]))
    for i in by_fraction[:remainder]:
        sizes[i] += 1
    while n >= 3 and min(sizes) == 0:
        sizes[sizes.index(max(sizes))] -= 1
        sizes[sizes.index(0)] += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(
    ids: Sequence[str], seed: int, ratios: Sequence[float] = (0.8, 0.1, 0.1)
) -> DatasetSplit:
    """Seeded shuffle of ``ids`` followed by contiguous train/val/test slices.

    Raises:
        DatasetError: If there are fewer than 3 ids
    """
    ordered = sorted(ids)
    if len(ordered) < 3:
        raise DatasetError(f"Need at least 3 samples to split, got {len(ordered)}")
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    permutation = stream(seed, "split").permutation(len(ordered))
    shuffled = [ordered[i] for i in permutation]
    split = DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )
    logger.info(f"Split {len(ordered)} samples into {split.sizes} (hash {split.split_hash})")
    return split


def select(samples: Sequence[SegmentationSample], ids: Sequence[str]) -> list[SegmentationSample]:
    """Samples with the given ids, in the order of ``ids``."""
    by_id = {sample.id: sample for sample in samples}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DatasetError(f"Unknown sample ids: {', '.join(missing[:5])}")
    return [by_id[i] for i in ids]


def stack_batch(samples: Sequence[SegmentationSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into images ``[N, C, H, W]`` and masks ``[N, 1, H, W]`` (float)."""
    images = np.stack([s.image for s in samples]).astype(np.float64)
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float64)
    return images, masks
