"""Patch embedding and pre-norm transformer encoder blocks."""

import logging
import math
from typing import Optional

import numpy as np

from trans2unet.nn import init
from trans2unet.nn.layers import Conv2d, Dropout, LayerNorm, Linear
from trans2unet.nn.module import Module, Parameter
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)


class PatchEmbed(Module):
    """Split a feature map into ``patch×patch`` patches and project each to ``D``.

    The projection is a stride-``patch`` convolution, so tokens are laid out
    row-major over the patch grid. Learned position embeddings (initialized
    to zero) are added elementwise.

    Args:
        in_channels: Feature-map channels
        embed_dim: Token dimension D
        patch: Patch side in feature-map pixels
        grid: Patches per side (the token count is ``grid²``)
        rng: Generator for weight init
    """

    def __init__(
        self, in_channels: int, embed_dim: int, patch: int, grid: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        if patch < 1 or grid < 1:
            raise ValidationError(f"PatchEmbed needs patch >= 1 and grid >= 1, got {patch}, {grid}")
        self.patch = patch
        self.grid = grid
        self.embed_dim = embed_dim
        self.proj = Conv2d(
            in_channels,
            embed_dim,
            patch,
            rng,
            stride=patch,
            padding="valid",
            weight_init="trunc_normal",
        )
        self.pos_embed = Parameter(init.zeros((1, grid * grid, embed_dim)))

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    def forward(self, x: Tensor) -> Tensor:
        N, _, H, W = x.shape
        if H % self.patch or W % self.patch:
            raise ShapeError(f"Feature map {x.shape} is not divisible into {self.patch}x{self.patch} patches")
        if (H // self.patch) * (W // self.patch) != self.num_tokens:
            raise ShapeError(
                f"Feature map {x.shape} yields {(H // self.patch) * (W // self.patch)} tokens, "
                f"position embedding holds {self.num_tokens}"
            )
        y = self.proj(x)
        tokens = ops.transpose(ops.reshape(y, (N, self.embed_dim, self.num_tokens)), (0, 2, 1))
        return ops.add(tokens, ops.broadcast_to(self.pos_embed, tokens.shape))


class MultiHeadSelfAttention(Module):
    """h parallel scaled dot-product attentions, concatenated and projected.

    The attention weights of the last forward pass are kept in
    ``last_attention`` (``[N, h, T, T]``) for inspection.
    """

    def __init__(
        self, embed_dim: int, heads: int, rng: np.random.Generator, dropout_p: float = 0.0
    ) -> None:
        super().__init__()
        if heads < 1 or embed_dim % heads:
            raise ValidationError(f"embed_dim {embed_dim} must be divisible by heads {heads}")
        self.embed_dim = embed_dim
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.query = Linear(embed_dim, embed_dim, rng)
        self.key = Linear(embed_dim, embed_dim, rng)
        self.value = Linear(embed_dim, embed_dim, rng)
        self.proj = Linear(embed_dim, embed_dim, rng)
        self.dropout = Dropout(dropout_p)
        self.last_attention: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor) -> Tensor:
        N, T, _ = x.shape
        return ops.transpose(ops.reshape(x, (N, T, self.heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.embed_dim:
            raise ShapeError(f"Attention expects [N, T, {self.embed_dim}] tokens, got {x.shape}")
        N, T, D = x.shape
        q = self._split_heads(self.query(x))
        k = self._split_heads(self.key(x))
        v = self._split_heads(self.value(x))
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        attention = ops.softmax(scores)
        self.last_attention = attention.data
        heads = ops.matmul(attention, v)
        merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (N, T, D))
        return self.dropout(self.proj(merged))


class Mlp(Module):
    """Two-layer GELU MLP with hidden width ``round(D · mlp_ratio)``."""

    def __init__(
        self, embed_dim: int, mlp_ratio: float, rng: np.random.Generator, dropout_p: float = 0.0
    ) -> None:
        super().__init__()
        hidden = max(1, int(round(embed_dim * mlp_ratio)))
        self.fc1 = Linear(embed_dim, hidden, rng)
        self.fc2 = Linear(hidden, embed_dim, rng)
        self.dropout = Dropout(dropout_p)

    def forward(self, x: Tensor) -> Tensor:
        return self.dropout(self.fc2(ops.gelu(self.fc1(x))))


class TransformerBlock(Module):
    """Pre-norm encoder block: ``x + MHSA(LN(x))`` then ``x + MLP(LN(x))``.

    Example:
        >>> block = TransformerBlock(8, heads=2, mlp_ratio=2.0, rng=rng)
        >>> block(tokens).shape  # unchanged, e.g. (2, 5, 8)
    """

    def __init__(
        self,
        embed_dim: int,
        heads: int,
        mlp_ratio: float,
        rng: np.random.Generator,
        dropout_p: float = 0.0,
    ) -> None:
        super().__init__()
        self.norm1 = LayerNorm(embed_dim)
        self.attn = MultiHeadSelfAttention(embed_dim, heads, rng, dropout_p)
        self.norm2 = LayerNorm(embed_dim)
        self.mlp = Mlp(embed_dim, mlp_ratio, rng, dropout_p)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.mlp(self.norm2(x)))


def transformer_block_parameter_count(embed_dim: int, mlp_ratio: float) -> int:
    """Closed-form parameter count of one ``TransformerBlock``."""
    hidden = max(1, int(round(embed_dim * mlp_ratio)))
    attention = 4 * (embed_dim * embed_dim + embed_dim)
    mlp = embed_dim * hidden + hidden + hidden * embed_dim + embed_dim
    return attention + mlp + 4 * embed_dim
