"""Multi-scale context modules: waterfall atrous pooling (WASP / WASP-KC) and ASPP.

A waterfall module chains four atrous units: unit ``i`` runs a dilated 3×3
conv block ``d_i`` on its input, where the first unit reads the module input
and every later unit reads the previous unit's ``d``. Two 1×1 conv blocks
follow inside each unit. In the dense-skip variant (WASP-KC) each 1×1 block
reads the concatenation of every earlier output inside the unit plus the
unit input:

    a_i = block1x1([d_i, input_i])
    u_i = block1x1([a_i, d_i, input_i])

The module output is ``u_1 + u_2 + u_3 + u_4`` plus the broadcast 1×1
projection of the globally averaged input (no nonlinearity on that branch).
"""

import logging
from collections.abc import Sequence
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from trans2unet.nn.layers import (
    Conv2d,
    ConvBlock,
    DenseConvBlock,
    conv_block_parameter_count,
    conv_parameter_count,
)
from trans2unet.nn.module import Module, ModuleList
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError, ValidationError

if TYPE_CHECKING:
    from trans2unet.models.config import WaspConfig

logger = logging.getLogger(__name__)

NUM_UNITS = 4


def _check_rates(rates: Sequence[int]) -> tuple[int, ...]:
    rates = tuple(int(r) for r in rates)
    if len(rates) != NUM_UNITS:
        raise ValidationError(f"Context module needs exactly {NUM_UNITS} dilation rates, got {list(rates)}")
    if min(rates) < 1 or any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValidationError(f"Dilation rates must be positive and strictly increasing, got {list(rates)}")
    return rates


class WaspUnit(Module):
    """One atrous unit: dilated 3×3 block followed by two 1×1 blocks."""

    def __init__(
        self,
        in_channels: int,
        branch_channels: int,
        rate: int,
        dense_skip: bool,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.dense_skip = dense_skip
        B = branch_channels
        self.atrous = ConvBlock(in_channels, B, rng, kernel=3, dilation=rate)
        self.reduce = DenseConvBlock([B, in_channels] if dense_skip else [B], B, rng)
        self.expand = DenseConvBlock([B, B, in_channels] if dense_skip else [B], B, rng)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(u, d)``: the unit output and the atrous feature passed down the waterfall."""
        d = self.atrous(x)
        if self.dense_skip:
            a = self.reduce([d, x])
            u = self.expand([a, d, x])
        else:
            a = self.reduce([d])
            u = self.expand([a])
        return u, d


class Wasp(Module):
    """Waterfall atrous spatial pooling; ``dense_skip=True`` gives WASP-KC.

    Args:
        in_channels: Input feature channels C
        branch_channels: Output channels B of every unit and of the module
        rates: Four strictly increasing dilation rates
        dense_skip: Concatenate earlier in-unit outputs into the 1×1 blocks
        rng: Generator for weight init

    Raises:
        ValidationError: If the rate list does not hold exactly 4 increasing rates
    """

    def __init__(
        self,
        in_channels: int,
        branch_channels: int,
        rates: Sequence[int],
        dense_skip: bool,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.rates = _check_rates(rates)
        self.in_channels = in_channels
        self.branch_channels = branch_channels
        self.dense_skip = dense_skip
        self.units = ModuleList()
        channels = in_channels
        for rate in self.rates:
            self.units.append(WaspUnit(channels, branch_channels, rate, dense_skip, rng))
            channels = branch_channels
        self.pool_proj = Conv2d(in_channels, branch_channels, 1, rng)

    @classmethod
    def from_config(cls, cfg: "WaspConfig", rng: np.random.Generator) -> "Wasp":
        return cls(cfg.in_channels, cfg.branch_channels, cfg.dilation_rates, cfg.dense_skip, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Context module expects [N, {self.in_channels}, H, W], got {x.shape}")
        total = None
        source = x
        for unit in self.units:
            u, source = unit(source)
            total = u if total is None else ops.add(total, u)
        assert total is not None
        pooled = self.pool_proj(ops.global_avg_pool(x))
        return ops.add(total, ops.broadcast_to(pooled, total.shape))


class Aspp(Module):
    """Atrous spatial pyramid pooling with parallel branches.

    One 1×1 block, three dilated 3×3 blocks (``rates[1:]``) and a pooled 1×1
    projection run side by side on the input; their concatenation is fused by
    a 1×1 block to ``branch_channels``.
    """

    def __init__(
        self,
        in_channels: int,
        branch_channels: int,
        rates: Sequence[int],
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.rates = _check_rates(rates)
        B = branch_channels
        self.branches = ModuleList([ConvBlock(in_channels, B, rng, kernel=1)])
        for rate in self.rates[1:]:
            self.branches.append(ConvBlock(in_channels, B, rng, kernel=3, dilation=rate))
        self.pool_proj = Conv2d(in_channels, B, 1, rng)
        self.fuse = ConvBlock(B * (len(self.rates) + 1), B, rng, kernel=1)

    def forward(self, x: Tensor) -> Tensor:
        outputs = [branch(x) for branch in self.branches]
        pooled = self.pool_proj(ops.global_avg_pool(x))
        outputs.append(ops.broadcast_to(pooled, outputs[0].shape))
        return self.fuse(ops.concat(outputs, axis=1))


def wasp_parameter_count(
    in_channels: int, branch_channels: int, dense_skip: bool, num_units: int = NUM_UNITS
) -> int:
    """Closed-form parameter count of a WASP (or WASP-KC) module."""
    B = branch_channels
    total = conv_parameter_count(in_channels, B, 1)
    channels = in_channels
    for _ in range(num_units):
        total += conv_block_parameter_count(channels, B, 3)
        total += conv_block_parameter_count(B + (channels if dense_skip else 0), B, 1)
        total += conv_block_parameter_count(B + (B + channels if dense_skip else 0), B, 1)
        channels = B
    return total


def dense_skip_parameter_delta(in_channels: int, branch_channels: int) -> int:
    """Extra parameters WASP-KC adds over WASP: ``Σ_i B·(2·cin_i + B)``."""
    B = branch_channels
    widths = [in_channels] + [B] * (NUM_UNITS - 1)
    return sum(B * (2 * c + B) for c in widths)


def aspp_parameter_count(in_channels: int, branch_channels: int) -> int:
    """Closed-form parameter count of an ASPP module."""
    B = branch_channels
    return (
        conv_block_parameter_count(in_channels, B, 1)
        + (NUM_UNITS - 1) * conv_block_parameter_count(in_channels, B, 3)
        + conv_parameter_count(in_channels, B, 1)
        + conv_block_parameter_count(B * (NUM_UNITS + 1), B, 1)
    )


def context_parameter_table(cfg: "WaspConfig") -> pd.DataFrame:
    """Parameter counts of ASPP, WASP and WASP-KC built from the same widths.

    Args:
        cfg: Context module configuration (dense_skip is ignored)

    Returns:
        DataFrame with columns ``module`` and ``parameters``, one row per kind

    Example:
        >>> context_parameter_table(WaspConfig(in_channels=32, branch_channels=32))
    """
    C, B = cfg.in_channels, cfg.branch_channels
    return pd.DataFrame(
        {
            "module": ["aspp", "wasp", "wasp_kc"],
            "parameters": [
                aspp_parameter_count(C, B),
                wasp_parameter_count(C, B, dense_skip=False),
                wasp_parameter_count(C, B, dense_skip=True),
            ],
        }
    )
