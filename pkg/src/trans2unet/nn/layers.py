"""Basic layers: convolution, normalization, linear, dropout and conv blocks."""

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np

from trans2unet.nn import init
from trans2unet.nn.module import Module, Parameter
from trans2unet.tensor import Tensor, get_default_dtype, ops
from trans2unet.utils.exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)


def conv_parameter_count(in_channels: int, out_channels: int, kernel: int) -> int:
    """Parameters of a ``kernel×kernel`` conv with bias: ``Cin·Cout·k² + Cout``."""
    return in_channels * out_channels * kernel * kernel + out_channels


def conv_block_parameter_count(
    in_channels: int, out_channels: int, kernel: int, use_bn: bool = True
) -> int:
    """Parameters of a conv block: the conv plus ``2·Cout`` when batch-normalized."""
    return conv_parameter_count(in_channels, out_channels, kernel) + (
        2 * out_channels if use_bn else 0
    )


class Conv2d(Module):
    """2-D convolution with bias.

    Args:
        in_channels: Input channels
        out_channels: Output channels
        kernel: Square kernel size (odd for "same" padding)
        rng: Generator for weight init
        dilation: Kernel tap spacing
        stride: Output stride
        padding: "same" or "valid"
        weight_init: "kaiming" (CNN layers) or "trunc_normal" (transformer layers)
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        dilation: int = 1,
        stride: int = 1,
        padding: str = "same",
        weight_init: str = "kaiming",
    ) -> None:
        super().__init__()
        if min(in_channels, out_channels, kernel, dilation, stride) < 1:
            raise ValidationError(
                f"Conv2d needs positive sizes, got in={in_channels}, out={out_channels}, "
                f"kernel={kernel}, dilation={dilation}, stride={stride}"
            )
        if padding == "same" and kernel % 2 == 0:
            raise ValidationError(f"Conv2d kernel must be odd for 'same' padding, got {kernel}")
        shape = (out_channels, in_channels, kernel, kernel)
        if weight_init == "kaiming":
            weight = init.kaiming_uniform(shape, rng)
        elif weight_init == "trunc_normal":
            weight = init.trunc_normal(shape, rng)
        else:
            raise ValidationError(f"Unknown weight init: {weight_init!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.dilation = dilation
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(weight)
        self.bias = Parameter(init.zeros((out_channels,)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            dilation=self.dilation,
            padding=self.padding,
        )


class BatchNorm2d(Module):
    """Batch normalization over ``[N,C,H,W]`` with running statistics.

    Running mean starts at 0 and running variance at 1, so evaluating before
    any training step applies only the affine transform. The running
    statistics are a cumulative average while fewer than ``1 / momentum``
    batches have been seen and an exponential average with ``momentum``
    afterwards; the first training batch therefore sets them to its own
    statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(init.ones((channels,)))
        self.beta = Parameter(init.zeros((channels,)))
        dtype = get_default_dtype()
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.register_buffer("num_batches_tracked", np.zeros(1, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        momentum = self.momentum
        if self.training:
            self.num_batches_tracked += 1
            momentum = max(self.momentum, 1.0 / float(self.num_batches_tracked[0]))
        return ops.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=momentum,
            eps=self.eps,
        )


class LayerNorm(Module):
    """Layer normalization over the last axis."""

    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(init.ones((dim,)))
        self.beta = Parameter(init.zeros((dim,)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    """Affine map ``x @ W + b`` over the last axis; ``W`` is ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(init.trunc_normal((in_features, out_features), rng))
        self.bias = Parameter(init.zeros((out_features,)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"Linear expects last dimension {self.in_features}, got input {x.shape}"
            )
        y = ops.matmul(x, self.weight)
        return ops.add(y, ops.broadcast_to(self.bias, y.shape))


class Dropout(Module):
    """Inverted dropout; draws masks from ``rng`` (set via ``set_dropout_rng``)."""

    def __init__(self, p: float) -> None:
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValidationError(f"Dropout p must be in [0, 1), got {p}")
        self.p = p
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, training=self.training, rng=self.rng)


class ConvBlock(Module):
    """conv → (BN) → ReLU with "same" padding and stride 1.

    Example:
        >>> block = ConvBlock(3, 8, rng=stream(0, "init"))
        >>> block(x).shape  # (N, 8, H, W)
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        dilation: int = 1,
        use_bn: bool = True,
    ) -> None:
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, rng, dilation=dilation)
        self.bn = BatchNorm2d(out_channels) if use_bn else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.bn is not None:
            y = self.bn(y)
        return ops.relu(y)


class DenseProjection(Module):
    """1×1 convolution over the channel-concatenation of several sources.

    The weight is stored as one ``[Cout, ΣCin, 1, 1]`` tensor, laid out in
    source order, but the concatenation is never materialized: each source
    is convolved with its own contiguous weight slice and the partial
    results are summed before the bias is added. With a single source this
    is an ordinary 1×1 convolution, and with every non-primary slice at zero
    the output equals the single-source one bit for bit.
    """

    def __init__(
        self, source_channels: Sequence[int], out_channels: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        if not source_channels or min(source_channels) < 1:
            raise ValidationError(f"DenseProjection needs positive source widths, got {source_channels}")
        self.source_channels = tuple(int(c) for c in source_channels)
        self.out_channels = out_channels
        total = sum(self.source_channels)
        self.weight = Parameter(init.kaiming_uniform((out_channels, total, 1, 1), rng))
        self.bias = Parameter(init.zeros((out_channels,)))

    def forward(self, sources: Sequence[Tensor]) -> Tensor:
        if len(sources) != len(self.source_channels):
            raise ShapeError(
                f"DenseProjection expects {len(self.source_channels)} sources, got {len(sources)}"
            )
        out: Optional[Tensor] = None
        start = 0
        for source, channels in zip(sources, self.source_channels):
            if len(self.source_channels) == 1:
                weight: Tensor = self.weight
            else:
                weight = ops.slice_axis(self.weight, 1, start, start + channels)
            part = ops.conv2d(source, weight, padding="valid")
            out = part if out is None else ops.add(out, part)
            start += channels
        assert out is not None
        bias = ops.broadcast_to(ops.reshape(self.bias, (1, self.out_channels, 1, 1)), out.shape)
        return ops.add(out, bias)


class DenseConvBlock(Module):
    """DenseProjection → BN → ReLU; the 1×1 block of a context unit."""

    def __init__(
        self, source_channels: Sequence[int], out_channels: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.proj = DenseProjection(source_channels, out_channels, rng)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, sources: Sequence[Tensor]) -> Tensor:
        return ops.relu(self.bn(self.proj(sources)))
