"""Differentiable operations over ``Tensor``.

Each operation is a ``Function`` subclass paired with a lower-case functional
wrapper that validates shapes before any compute. Elementwise binary
operations require identical shapes; the only implicit broadcasting is over
the batch dimensions of ``matmul``. Everything else is explicit
(``broadcast_to``).
"""

import logging
from collections.abc import Sequence
from typing import Any, Optional, Union

import numpy as np

from trans2unet.tensor.core import Axis, Function, Scalar, Tensor
from trans2unet.utils.exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)

GELU_COEFF = 0.044715
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} must be identical")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return grad, grad


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return grad, -grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (-grad,)


class Scale(Function):
    def forward(self, x: np.ndarray, factor: float) -> np.ndarray:
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * grad.dtype.type(self.factor),)


class Shift(Function):
    def forward(self, x: np.ndarray, value: float) -> np.ndarray:
        return x + x.dtype.type(value)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad,)


class Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.log(x)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad / self.x,)


class Clip(Function):
    def forward(self, x: np.ndarray, low: float, high: float) -> np.ndarray:
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.inside,)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _require_same_shape("add", a, b)
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference of two same-shape tensors."""
    _require_same_shape("sub", a, b)
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _require_same_shape("mul", a, b)
    return Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient of two same-shape tensors."""
    _require_same_shape("div", a, b)
    return Div.apply(a, b)


def neg(x: Tensor) -> Tensor:
    """Elementwise negation."""
    return Neg.apply(x)


def scale(x: Tensor, factor: Scalar) -> Tensor:
    """Multiply by a Python scalar."""
    return Scale.apply(x, factor=float(factor))


def shift(x: Tensor, value: Scalar) -> Tensor:
    """Add a Python scalar."""
    return Shift.apply(x, value=float(value))


def log(x: Tensor) -> Tensor:
    """Natural logarithm."""
    return Log.apply(x)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp to ``[low, high]``; gradient is zero where clamping is active."""
    if low > high:
        raise ValidationError(f"clip bounds must satisfy low <= high, got ({low}, {high})")
    return Clip.apply(x, low=low, high=high)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------


class Sum(Function):
    def forward(self, x: np.ndarray, axis: Optional[Axis], keepdims: bool) -> np.ndarray:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(a % len(self.shape) for a in axes)
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: Optional[tuple[int, ...]]) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class BroadcastTo(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.shape = x.shape
        return np.broadcast_to(x, shape).copy()

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (_unbroadcast(grad, self.shape),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class SliceAxis(Function):
    def forward(self, x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
        self.shape = x.shape
        self.index = tuple(
            slice(start, stop) if i == axis else slice(None) for i in range(x.ndim)
        )
        return x[self.index].copy()

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


def sum(x: Tensor, axis: Optional[Axis] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum over ``axis`` (all axes when None)."""
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Optional[Axis] = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes when None)."""
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Reshape to ``shape``; element count must match exactly."""
    target = tuple(int(s) for s in shape)
    known = int(np.prod([s for s in target if s != -1]))
    if target.count(-1) > 1 or (
        -1 not in target and known != x.size or -1 in target and (known == 0 or x.size % known)
    ):
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {target}")
    return Reshape.apply(x, shape=target)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (reverse order when ``axes`` is None)."""
    if axes is not None and sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {tuple(axes)} are not a permutation for shape {x.shape}")
    return Transpose.apply(x, axes=tuple(axes) if axes is not None else None)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly broadcast ``x`` to ``shape`` (numpy rules); gradient sums back."""
    target = tuple(int(s) for s in shape)
    try:
        result_shape = np.broadcast_shapes(x.shape, target)
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {target}") from e
    if result_shape != target:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {target}")
    return BroadcastTo.apply(x, shape=target)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree.

    Example:
        >>> concat([a, b], axis=1)  # [N,3,H,W] + [N,5,H,W] -> [N,8,H,W]
    """
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != reference[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat: shapes {reference} and {t.shape} disagree off axis {axis}"
            )
    return Concat.apply(*tensors, axis=axis)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Take ``x[..., start:stop, ...]`` along ``axis`` as a contiguous copy."""
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    return SliceAxis.apply(x, axis=axis, start=start, stop=stop)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _unbroadcast(grad_a, self.a.shape), _unbroadcast(grad_b, self.b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., M, K] @ b[..., K, N]``.

    Batch dimensions broadcast; the inner dimensions must agree.

    Raises:
        ShapeError: Naming both shapes on any mismatch
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise ShapeError(
            f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast"
        ) from e
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# Convolution, pooling, resampling
# ---------------------------------------------------------------------------


def conv_padding(kernel: int, dilation: int, padding: str) -> int:
    """Per-side zero padding for a kernel under "same" or "valid" padding."""
    if padding == "valid":
        return 0
    if padding == "same":
        return dilation * (kernel - 1) // 2
    raise ValidationError(f"padding must be 'same' or 'valid', got: {padding!r}")


class Conv2d(Function):
    def forward(
        self,
        x: np.ndarray,
        w: np.ndarray,
        b: Optional[np.ndarray] = None,
        *,
        stride: int,
        dilation: int,
        padding: str,
    ) -> np.ndarray:
        N, C, H, W = x.shape
        _, _, kh, kw = w.shape
        ph = conv_padding(kh, dilation, padding)
        pw = conv_padding(kw, dilation, padding)
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        Ho = (H + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
        Wo = (W + 2 * pw - dilation * (kw - 1) - 1) // stride + 1

        # im2col: one strided view per kernel tap
        cols = np.empty((N, C, kh, kw, Ho, Wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                hi, wj = i * dilation, j * dilation
                cols[:, :, i, j] = xp[
                    :, :, hi : hi + stride * (Ho - 1) + 1 : stride, wj : wj + stride * (Wo - 1) + 1 : stride
                ]
        out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b[None, :, None, None]

        self.cols, self.w, self.has_bias = cols, w, b is not None
        self.geometry = (x.shape, xp.shape, ph, pw, stride, dilation)
        return out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        x_shape, xp_shape, ph, pw, stride, dilation = self.geometry
        _, _, H, W = x_shape
        _, _, kh, kw = self.w.shape
        Ho, Wo = grad.shape[2], grad.shape[3]

        grad_w = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 4, 5]))
        grad_cols = np.tensordot(grad, self.w, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
        grad_xp = np.zeros(xp_shape, dtype=grad_cols.dtype)
        for i in range(kh):
            for j in range(kw):
                hi, wj = i * dilation, j * dilation
                grad_xp[
                    :, :, hi : hi + stride * (Ho - 1) + 1 : stride, wj : wj + stride * (Wo - 1) + 1 : stride
                ] += grad_cols[:, :, i, j]
        grad_x = grad_xp[:, :, ph : ph + H, pw : pw + W]
        if self.has_bias:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3))
        return grad_x, grad_w


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation ``x[N,Cin,H,W] * w[Cout,Cin,kh,kw] (+ bias[Cout])``.

    The effective kernel extent per axis is ``k + (k - 1)(dilation - 1)``.
    With "same" padding and stride 1 the spatial size is preserved.

    Raises:
        ValidationError: If stride or dilation < 1, or padding is unknown
        ShapeError: On channel mismatch, even kernels under "same" padding,
            or an empty output
    """
    if stride < 1 or dilation < 1:
        raise ValidationError(f"conv2d: stride and dilation must be >= 1, got {stride}, {dilation}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[1]} channels, weight {w.shape} expects {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
        raise ShapeError(f"conv2d: 'same' padding needs odd kernel sizes, got {kh}x{kw}")
    ph, pw = conv_padding(kh, dilation, padding), conv_padding(kw, dilation, padding)
    if x.shape[2] + 2 * ph < dilation * (kh - 1) + 1 or x.shape[3] + 2 * pw < dilation * (kw - 1) + 1:
        raise ShapeError(f"conv2d: input {x.shape} is smaller than the dilated kernel {w.shape}")
    if bias is None:
        return Conv2d.apply(x, w, stride=stride, dilation=dilation, padding=padding)
    if bias.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weight {w.shape}")
    return Conv2d.apply(x, w, bias, stride=stride, dilation=dilation, padding=padding)


class MaxPool2d(Function):
    def forward(self, x: np.ndarray, k: int) -> np.ndarray:
        N, C, H, W = x.shape
        windows = (
            x.reshape(N, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // k, W // k, k * k)
        )
        # argmax keeps the first maximum in row-major window order
        self.index = windows.argmax(axis=-1)[..., None]
        self.shape, self.k = x.shape, k
        return np.take_along_axis(windows, self.index, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        N, C, H, W = self.shape
        k = self.k
        windows = np.zeros((N, C, H // k, W // k, k * k), dtype=grad.dtype)
        np.put_along_axis(windows, self.index, grad[..., None], axis=-1)
        return (windows.reshape(N, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(self.shape),)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping ``k×k`` max pooling (stride must equal ``k``).

    The gradient of each window goes to its first maximum in row-major order.

    Raises:
        ShapeError: If H or W is not divisible by ``k``
    """
    if stride != k:
        raise ValidationError(f"maxpool2d: only stride == k is supported, got k={k}, stride={stride}")
    if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
        raise ShapeError(f"maxpool2d: spatial dims of {x.shape} must be divisible by {k}")
    return MaxPool2d.apply(x, k=k)


def bilinear_weights(in_size: int, out_size: int, dtype: Any = np.float64) -> np.ndarray:
    """Interpolation matrix ``A[out, in]`` for 1-D linear resampling.

    Uses the align-corners=false convention: output sample ``o`` reads the
    source coordinate ``max((o + 0.5) * in / out - 0.5, 0)``. Rows sum to 1.
    """
    src = np.maximum((np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5, 0.0)
    low = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    high = np.minimum(low + 1, in_size - 1)
    frac = src - low
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(weights, (rows, low), 1.0 - frac)
    np.add.at(weights, (rows, high), frac)
    return weights.astype(dtype)


class UpsampleBilinear(Function):
    def forward(self, x: np.ndarray, factor: int) -> np.ndarray:
        _, _, H, W = x.shape
        self.rows = bilinear_weights(H, H * factor, x.dtype)
        self.cols = bilinear_weights(W, W * factor, x.dtype)
        return np.einsum("ih,nchw,jw->ncij", self.rows, x, self.cols, optimize=True)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (np.einsum("ih,ncij,jw->nchw", self.rows, grad, self.cols, optimize=True),)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer ``factor`` (align-corners=false).

    Raises:
        ValidationError: If factor < 1
    """
    if factor < 1:
        raise ValidationError(f"upsample_bilinear: factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear: expected a 4-D tensor, got {x.shape}")
    if factor == 1:
        return x
    return UpsampleBilinear.apply(x, factor=factor)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        _, _, H, W = self.shape
        return (np.broadcast_to(grad / (H * W), self.shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over the spatial axes: ``[N,C,H,W] -> [N,C,1,1]``."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected a 4-D tensor, got {x.shape}")
    return GlobalAvgPool.apply(x)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


class LayerNorm(Function):
    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
        centered = x - x.mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
        self.xhat = centered * self.rstd
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        lead = tuple(range(grad.ndim - 1))
        grad_xhat = grad * self.gamma
        grad_x = self.rstd * (
            grad_xhat
            - grad_xhat.mean(axis=-1, keepdims=True)
            - self.xhat * (grad_xhat * self.xhat).mean(axis=-1, keepdims=True)
        )
        return grad_x, (grad * self.xhat).sum(axis=lead), grad.sum(axis=lead)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ValidationError(f"layernorm: eps must be positive, got {eps}")
    D = x.shape[-1] if x.ndim else 0
    if D < 1 or gamma.shape != (D,) or beta.shape != (D,):
        raise ShapeError(f"layernorm: input {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


class BatchNorm2d(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        training: bool,
        momentum: float,
        eps: float,
    ) -> np.ndarray:
        axes = (0, 2, 3)
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean_ = x.mean(axis=axes)
            var = x.var(axis=axes)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean_
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / (count - 1)
        else:
            mean_ = running_mean.copy()
            var = running_var.copy()
        self.training = training
        self.rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)[None, :, None, None]
        self.xhat = (x - mean_.astype(x.dtype)[None, :, None, None]) * self.rstd
        self.gamma = gamma[None, :, None, None]
        return self.xhat * self.gamma + beta[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        axes = (0, 2, 3)
        grad_xhat = grad * self.gamma
        if self.training:
            grad_x = self.rstd * (
                grad_xhat
                - grad_xhat.mean(axis=axes, keepdims=True)
                - self.xhat * (grad_xhat * self.xhat).mean(axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_xhat * self.rstd
        return grad_x, (grad * self.xhat).sum(axis=axes), grad.sum(axis=axes)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization of ``x[N,C,H,W]``.

    Training mode normalizes with the batch statistics (population variance)
    and updates ``running_mean`` / ``running_var`` in place with ``momentum``;
    eval mode normalizes with the running statistics.

    Raises:
        ShapeError: On parameter mismatch, or fewer than 2 values per channel
            in training mode
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: expected a 4-D tensor, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,) or running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeError(f"batchnorm2d: input {x.shape} does not match parameters of shape {gamma.shape}")
    if training and x.shape[0] * x.shape[2] * x.shape[3] < 2:
        raise ShapeError(f"batchnorm2d: training needs >= 2 values per channel, got input {x.shape}")
    return BatchNorm2d.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=training,
        momentum=momentum,
        eps=eps,
    )


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


class Softmax(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.y = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (self.y * (grad - (grad * self.y).sum(axis=-1, keepdims=True)),)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.mask,)


class GELU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.t = np.tanh(_SQRT_2_OVER_PI * (x + GELU_COEFF * x**3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        x, t = self.x, self.t
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        z = np.exp(-np.abs(x))
        self.y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
        return self.y

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.y * (1.0 - self.y),)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted for stability)."""
    if x.ndim < 1:
        raise ShapeError("softmax: expected at least one axis")
    return Softmax.apply(x)


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit; the gradient at 0 is 0."""
    return ReLU.apply(x)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    return GELU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function."""
    return Sigmoid.apply(x)


# ---------------------------------------------------------------------------
# Regularization
# ---------------------------------------------------------------------------


class Dropout(Function):
    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        self.mask = mask
        return x * mask

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.mask,)


def dropout(
    x: Tensor, p: float, training: bool, rng: Optional[Union[np.random.Generator, Any]] = None
) -> Tensor:
    """Inverted dropout.

    In training mode each element is zeroed with probability ``p`` and
    survivors are scaled by ``1 / (1 - p)``; eval mode returns ``x`` itself.
    Masks are drawn from ``rng``.

    Raises:
        ValidationError: If p is outside [0, 1), or if a mask is needed and
            no generator was given
    """
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValidationError(
            "dropout: training with p > 0 needs a generator (see Module.set_dropout_rng)"
        )
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return Dropout.apply(x, mask=mask)
