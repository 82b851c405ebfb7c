"""Residual CNN encoder feeding the transformer branch."""

import logging
from collections.abc import Sequence

import numpy as np

from trans2unet.nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvBlock,
    conv_block_parameter_count,
    conv_parameter_count,
)
from trans2unet.nn.module import Module, ModuleList
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)


class ResidualStage(Module):
    """Down-sampling residual stage.

    ``pool(x)`` feeds two paths: a 1×1 projection shortcut and a residual
    pair (3×3 conv block, then 3×3 conv + BN). The stage returns
    ``relu(shortcut + residual)`` at half the input resolution.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.block = ConvBlock(in_channels, out_channels, rng)
        self.conv = Conv2d(out_channels, out_channels, 3, rng)
        self.bn = BatchNorm2d(out_channels)
        self.shortcut = Conv2d(in_channels, out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        pooled = ops.maxpool2d(x)
        residual = self.bn(self.conv(self.block(pooled)))
        return ops.relu(ops.add(self.shortcut(pooled), residual))

    @staticmethod
    def parameter_count(in_channels: int, out_channels: int) -> int:
        return (
            conv_block_parameter_count(in_channels, out_channels, 3)
            + conv_block_parameter_count(out_channels, out_channels, 3)
            + conv_parameter_count(in_channels, out_channels, 1)
        )


class CnnEncoder(Module):
    """Three residual down-stages standing in for a ResNet backbone.

    Returns the ``H/8`` feature map and the skips at ``H/2`` and ``H/4``.

    Args:
        in_channels: Image channels
        widths: Output channels of the three stages
        rng: Generator for weight init
    """

    def __init__(self, in_channels: int, widths: Sequence[int], rng: np.random.Generator) -> None:
        super().__init__()
        if len(widths) != 3:
            raise ValidationError(f"CNN encoder needs exactly 3 widths, got {list(widths)}")
        self.widths = tuple(widths)
        self.stages = ModuleList()
        previous = in_channels
        for width in widths:
            self.stages.append(ResidualStage(previous, width, rng))
            previous = width

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        if x.ndim != 4 or x.shape[2] % 8 or x.shape[3] % 8:
            raise ShapeError(f"CNN encoder needs spatial dims divisible by 8, got {x.shape}")
        skips: list[Tensor] = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
        return skips[-1], skips[:-1]
