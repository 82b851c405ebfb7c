"""Minimal numpy autodiff engine used by every trans2unet model."""

from trans2unet.tensor.core import (
    Function,
    Graph,
    Tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
)
from trans2unet.tensor.ops import (
    add,
    batchnorm2d,
    bilinear_weights,
    broadcast_to,
    clip,
    concat,
    conv2d,
    div,
    dropout,
    gelu,
    global_avg_pool,
    layernorm,
    log,
    matmul,
    maxpool2d,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    shift,
    sigmoid,
    slice_axis,
    softmax,
    sub,
    transpose,
    upsample_bilinear,
)

__all__ = [
    "Function",
    "Graph",
    "Tensor",
    "add",
    "batchnorm2d",
    "bilinear_weights",
    "broadcast_to",
    "clip",
    "concat",
    "conv2d",
    "div",
    "dropout",
    "gelu",
    "get_default_dtype",
    "global_avg_pool",
    "is_grad_enabled",
    "layernorm",
    "log",
    "matmul",
    "maxpool2d",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "scale",
    "set_default_dtype",
    "shift",
    "sigmoid",
    "slice_axis",
    "softmax",
    "sub",
    "transpose",
    "upsample_bilinear",
]
