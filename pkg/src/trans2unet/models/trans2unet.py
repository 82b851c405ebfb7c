"""Two-branch Trans2Unet segmentation model.

    x ─┬─ UnetBranch ───────────────────────────────┐
       │                                            concat → dropout → ConvBlock → 1×1 head → logits
       └─ CnnEncoder → Wasp → PatchEmbed → ViT → LN → decoder ┘

The Unet branch stops before its final 1-channel convolution; both branches
return full-resolution feature maps that are fused by concatenation.
"""

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np

from trans2unet.models.config import ModelConfig
from trans2unet.nn import (
    CnnEncoder,
    Conv2d,
    ConvBlock,
    Dropout,
    LayerNorm,
    Module,
    ModuleList,
    PatchEmbed,
    TransformerBlock,
    Wasp,
)
from trans2unet.tensor import Tensor, ops
from trans2unet.utils.exceptions import ShapeError

logger = logging.getLogger(__name__)


class DoubleConv(Module):
    """Two 3×3 conv blocks."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.first = ConvBlock(in_channels, out_channels, rng)
        self.second = ConvBlock(out_channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))


class UnetBranch(Module):
    """Unet encoder/decoder without its final prediction conv.

    Three down-stages (two conv blocks, then 2×2 max-pool), a bottleneck, and
    three up-stages (bilinear ×2, concat the mirrored skip, two conv blocks).
    The last up-stage emits ``out_channels`` maps at input resolution.
    """

    def __init__(
        self,
        in_channels: int,
        widths: Sequence[int],
        out_channels: int,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        w1, w2, w3, w4 = widths
        self.widths = (w1, w2, w3, w4)
        self.down = ModuleList(
            [DoubleConv(in_channels, w1, rng), DoubleConv(w1, w2, rng), DoubleConv(w2, w3, rng)]
        )
        self.bottleneck = DoubleConv(w3, w4, rng)
        self.up = ModuleList(
            [
                DoubleConv(w4 + w3, w3, rng),
                DoubleConv(w3 + w2, w2, rng),
                DoubleConv(w2 + w1, out_channels, rng),
            ]
        )
        self.out_channels = out_channels

    def skip_channels(self) -> list[int]:
        """Channel count of the concatenation entering each up-stage."""
        w1, w2, w3, w4 = self.widths
        return [w4 + w3, w3 + w2, w2 + w1]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[2] % 8 or x.shape[3] % 8:
            raise ShapeError(f"Unet branch needs spatial dims divisible by 8, got {x.shape}")
        skips: list[Tensor] = []
        for stage in self.down:
            x = stage(x)
            skips.append(x)
            x = ops.maxpool2d(x)
        x = self.bottleneck(x)
        for stage, skip in zip(self.up, reversed(skips)):
            x = stage(ops.concat([ops.upsample_bilinear(x, 2), skip], axis=1))
        return x


class TransUnetBranch(Module):
    """CNN encoder → context module → ViT → cascaded decoder.

    The decoder upsamples the token grid three times by 2. An up-step
    concatenates a CNN skip when one exists at its resolution: the ``H/4``
    skip (stage 2) and the ``H/2`` skip (stage 1). With ``vit.patch = 1``
    that is up-step 1 ← H/4 and up-step 2 ← H/2, up-step 3 takes none;
    larger patches shift the skips to later steps. A 1×1 conv maps to
    ``transunet_out_channels`` and a final bilinear upsample by ``patch``
    restores the input size.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        size = config.input_size
        self.encoder = CnnEncoder(config.in_channels, config.cnn_widths, rng)
        if config.wasp.enabled:
            self.context: Optional[Wasp] = Wasp.from_config(config.wasp, rng)
            embed_in = config.wasp.branch_channels
        else:
            self.context = None
            embed_in = config.cnn_widths[-1]

        vit = config.vit
        self.grid = config.token_grid
        self.patch_embed = PatchEmbed(embed_in, vit.embed_dim, vit.patch, self.grid, rng)
        self.blocks = ModuleList(
            [
                TransformerBlock(vit.embed_dim, vit.heads, vit.mlp_ratio, rng, config.dropout_p)
                for _ in range(vit.layers)
            ]
        )
        self.norm = LayerNorm(vit.embed_dim)

        # Skip sources by side length: H/2 -> stage 1, H/4 -> stage 2.
        skip_widths = {size // 2: config.cnn_widths[0], size // 4: config.cnn_widths[1]}
        self.skip_sides: list[Optional[int]] = []
        self.decoder = ModuleList()
        channels = vit.embed_dim
        side = self.grid
        for width in config.decoder_widths:
            side *= 2
            skip = skip_widths.get(side)
            self.skip_sides.append(side if skip is not None else None)
            self.decoder.append(ConvBlock(channels + (skip or 0), width, rng))
            channels = width
        self.head = Conv2d(channels, config.transunet_out_channels, 1, rng)
        self.final_factor = size // side

    def forward(self, x: Tensor) -> Tensor:
        N = x.shape[0]
        features, skips = self.encoder(x)
        skip_by_side = {skip.shape[2]: skip for skip in skips}
        if self.context is not None:
            features = self.context(features)

        tokens = self.patch_embed(features)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)

        D = tokens.shape[2]
        y = ops.reshape(ops.transpose(tokens, (0, 2, 1)), (N, D, self.grid, self.grid))
        for stage, side in zip(self.decoder, self.skip_sides):
            y = ops.upsample_bilinear(y, 2)
            if side is not None:
                y = ops.concat([y, skip_by_side[side]], axis=1)
            y = stage(y)
        return ops.upsample_bilinear(self.head(y), self.final_factor)


class Trans2UnetModel(Module):
    """Fusion of the Unet and TransUnet branches.

    ``logits = head(fusion(dropout(concat(unet(x), transunet(x)))))``; the
    caller applies the sigmoid. With ``use_unet_branch = false`` only the
    TransUnet branch is fused.

    Args:
        config: Architecture hyperparameters
        rng: Generator for weight init (the run's ``init`` stream)

    Example:
        >>> model = Trans2UnetModel(RunConfig.micro(), stream(0, "init"))
        >>> model(Tensor(np.zeros((1, 1, 16, 16)))).shape
        (1, 1, 16, 16)
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config.model_settings()
        config = self.config
        fused = config.transunet_out_channels
        if config.use_unet_branch:
            self.unet: Optional[UnetBranch] = UnetBranch(
                config.in_channels, config.unet_widths, config.unet_out_channels, rng
            )
            fused += config.unet_out_channels
        else:
            self.unet = None
        self.transunet = TransUnetBranch(config, rng)
        self.fusion_dropout = Dropout(config.dropout_p)
        self.fusion = ConvBlock(fused, config.fusion_channels, rng)
        self.head = Conv2d(config.fusion_channels, 1, 1, rng)
        logger.info(f"Built Trans2Unet model with {self.num_parameters()} parameters")

    @property
    def expected_input(self) -> tuple[int, int, int]:
        c = self.config
        return c.in_channels, c.input_size, c.input_size

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.expected_input:
            raise ShapeError(f"Model expects input [N, {', '.join(map(str, self.expected_input))}], got {x.shape}")
        branches = [self.transunet(x)]
        if self.unet is not None:
            branches.insert(0, self.unet(x))
        fused = ops.concat(branches, axis=1) if len(branches) > 1 else branches[0]
        return self.head(self.fusion(self.fusion_dropout(fused)))


def count_parameters(module: Module) -> int:
    """Exact number of learnable scalars in a model or block."""
    return module.num_parameters()


def parameter_breakdown(model: Trans2UnetModel) -> dict[str, int]:
    """Parameter counts per part of the model.

    Returns:
        Ordered mapping with keys ``unet_branch``, ``cnn_encoder``, ``wasp``,
        ``vit``, ``decoder``, ``fusion`` and ``total``
    """
    tu = model.transunet
    vit = tu.patch_embed.num_parameters() + tu.norm.num_parameters()
    vit += sum(block.num_parameters() for block in tu.blocks)
    breakdown = {
        "unet_branch": model.unet.num_parameters() if model.unet is not None else 0,
        "cnn_encoder": tu.encoder.num_parameters(),
        "wasp": tu.context.num_parameters() if tu.context is not None else 0,
        "vit": vit,
        "decoder": tu.decoder.num_parameters() + tu.head.num_parameters(),
        "fusion": model.fusion.num_parameters() + model.head.num_parameters(),
    }
    breakdown["total"] = sum(breakdown.values())
    return breakdown
