"""Dataset ingestion, synthetic data and augmentation."""

from trans2unet.data.augment import augment_flip, flip_horizontal, flip_vertical
from trans2unet.data.dataset import (
    load_dataset,
    resize_image,
    resize_mask,
    save_dataset,
    select,
    split_dataset,
    split_sizes,
    stack_batch,
)
from trans2unet.data.pnm import encode_pnm, parse_pnm, read_pnm, to_pixels, write_pnm
from trans2unet.data.synthetic import generate_synthetic

__all__ = [
    "augment_flip",
    "encode_pnm",
    "flip_horizontal",
    "flip_vertical",
    "generate_synthetic",
    "load_dataset",
    "parse_pnm",
    "read_pnm",
    "resize_image",
    "resize_mask",
    "save_dataset",
    "select",
    "split_dataset",
    "split_sizes",
    "stack_batch",
    "to_pixels",
    "write_pnm",
]
