"""Layers and blocks built on the tensor engine."""

from trans2unet.nn.context import (
    Aspp,
    Wasp,
    WaspUnit,
    aspp_parameter_count,
    context_parameter_table,
    dense_skip_parameter_delta,
    wasp_parameter_count,
)
from trans2unet.nn.encoder import CnnEncoder, ResidualStage
from trans2unet.nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvBlock,
    DenseConvBlock,
    DenseProjection,
    Dropout,
    LayerNorm,
    Linear,
    conv_block_parameter_count,
    conv_parameter_count,
)
from trans2unet.nn.module import Module, ModuleList, Parameter
from trans2unet.nn.transformer import (
    Mlp,
    MultiHeadSelfAttention,
    PatchEmbed,
    TransformerBlock,
    transformer_block_parameter_count,
)

__all__ = [
    "Aspp",
    "BatchNorm2d",
    "CnnEncoder",
    "Conv2d",
    "ConvBlock",
    "DenseConvBlock",
    "DenseProjection",
    "Dropout",
    "LayerNorm",
    "Linear",
    "Mlp",
    "Module",
    "ModuleList",
    "MultiHeadSelfAttention",
    "Parameter",
    "PatchEmbed",
    "ResidualStage",
    "TransformerBlock",
    "Wasp",
    "WaspUnit",
    "aspp_parameter_count",
    "context_parameter_table",
    "conv_block_parameter_count",
    "conv_parameter_count",
    "dense_skip_parameter_delta",
    "transformer_block_parameter_count",
    "wasp_parameter_count",
]
