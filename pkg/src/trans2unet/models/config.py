"""Pydantic configuration models for architecture, training and data."""

import logging
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from trans2unet.processors.config_file import (
    flatten_config,
    format_flat,
    format_value,
    parse_flat,
    parse_override,
    unflatten_config,
)
from trans2unet.utils.exceptions import ConfigValidationError, ValidationError

logger = logging.getLogger(__name__)


def _positive_widths(values: list[int], count: int) -> list[int]:
    if len(values) != count:
        raise ValueError(f"expected exactly {count} values, got {len(values)}")
    if min(values) < 1:
        raise ValueError(f"all widths must be positive, got {values}")
    return values


class WaspConfig(BaseModel):
    """Context module between the CNN encoder and the transformer.

    ``dense_skip=false`` is the WASP baseline, ``true`` is WASP-KC;
    ``enabled=false`` feeds CNN features straight into the patch embedding.
    """

    model_config = ConfigDict(extra="forbid")

    enabled: bool = Field(True, description="Insert the context module")
    in_channels: int = Field(32, gt=0, description="Input channels (last CNN width)")
    branch_channels: int = Field(32, gt=0, description="Channels of every unit and of the output")
    dilation_rates: list[int] = Field(
        default_factory=lambda: [1, 2, 4, 8], description="Four increasing dilation rates"
    )
    dense_skip: bool = Field(True, description="Dense in-unit skips (WASP-KC)")

    @field_validator("dilation_rates")
    @classmethod
    def validate_rates(cls, v: list[int]) -> list[int]:
        """Require exactly four positive, strictly increasing rates."""
        if len(v) != 4:
            raise ValueError(f"expected exactly 4 dilation rates, got {len(v)}")
        if min(v) < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"rates must be positive and strictly increasing, got {v}")
        return v


class VitConfig(BaseModel):
    """Vision transformer stack of the TransUnet branch."""

    model_config = ConfigDict(extra="forbid")

    patch: int = Field(1, gt=0, description="Patch side on the H/8 feature map")
    embed_dim: int = Field(32, gt=0, description="Token dimension D")
    layers: int = Field(2, ge=0, description="Number of transformer blocks")
    heads: int = Field(4, gt=0, description="Attention heads (must divide embed_dim)")
    mlp_ratio: float = Field(2.0, gt=0, description="MLP hidden width / embed_dim")

    @model_validator(mode="after")
    def validate_heads(self) -> "VitConfig":
        if self.embed_dim % self.heads:
            raise ConfigValidationError(
                "vit.heads", f"{self.heads} does not divide embed_dim {self.embed_dim}"
            )
        return self


class ModelConfig(BaseModel):
    """All architecture hyperparameters of the two-branch model.

    Defaults are the desk-scale model (32×32 input).

    Example:
        >>> cfg = ModelConfig(input_size=64)
        >>> cfg.vit.embed_dim
        32
    """

    model_config = ConfigDict(extra="forbid")

    input_size: int = Field(32, gt=0, description="Square input side H=W (divisible by 16)")
    in_channels: int = Field(1, gt=0, description="Image channels (1 for PGM, 3 for PPM)")
    use_unet_branch: bool = Field(True, description="Fuse the Unet branch with the TransUnet branch")
    unet_widths: list[int] = Field(
        default_factory=lambda: [8, 16, 32, 64], description="Unet encoder widths (3 stages + bottleneck)"
    )
    unet_out_channels: int = Field(16, gt=0, description="Channels of the Unet branch output")
    cnn_widths: list[int] = Field(
        default_factory=lambda: [8, 16, 32], description="Residual CNN encoder stage widths"
    )
    wasp: WaspConfig = Field(default_factory=WaspConfig, description="Context module")
    vit: VitConfig = Field(default_factory=VitConfig, description="Transformer stack")
    decoder_widths: list[int] = Field(
        default_factory=lambda: [32, 16, 8], description="Cascaded decoder widths"
    )
    transunet_out_channels: int = Field(16, gt=0, description="Channels of the TransUnet branch output")
    fusion_channels: int = Field(16, gt=0, description="Channels of the fusion conv block")
    dropout_p: float = Field(0.2, ge=0.0, lt=1.0, description="Dropout probability")

    @field_validator("unet_widths")
    @classmethod
    def validate_unet_widths(cls, v: list[int]) -> list[int]:
        return _positive_widths(v, 4)

    @field_validator("cnn_widths", "decoder_widths")
    @classmethod
    def validate_three_widths(cls, v: list[int]) -> list[int]:
        return _positive_widths(v, 3)

    @model_validator(mode="after")
    def validate_geometry(self) -> "ModelConfig":
        """Check the cross-field divisibility and channel rules."""
        if self.input_size % 16:
            raise ConfigValidationError("input_size", f"{self.input_size} is not divisible by 16")
        if (self.input_size // 8) % self.vit.patch:
            raise ConfigValidationError(
                "vit.patch",
                f"{self.vit.patch} does not divide the feature map side {self.input_size // 8}",
            )
        if self.wasp.in_channels != self.cnn_widths[-1]:
            raise ConfigValidationError(
                "wasp.in_channels",
                f"{self.wasp.in_channels} must equal the last CNN width {self.cnn_widths[-1]}",
            )
        return self

    @property
    def token_grid(self) -> int:
        """Tokens per side of the transformer input."""
        return self.input_size // (8 * self.vit.patch)

    def model_settings(self) -> "ModelConfig":
        """Return only the architecture part of this configuration."""
        return ModelConfig.model_validate(
            {name: getattr(self, name) for name in ModelConfig.model_fields}
        )


class LossConfig(BaseModel):
    """Training loss."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["bce", "dice", "bce_plus_dice"] = Field(
        "bce_plus_dice", description="Loss to minimize"
    )
    dice_smooth: float = Field(1.0, gt=0, description="Dice smoothing constant s")
    bce_epsilon: float = Field(1e-7, gt=0, lt=0.5, description="Probability clamp for BCE")


class OptimizerConfig(BaseModel):
    """Adam hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    lr: float = Field(3e-4, ge=0, description="Initial learning rate")
    beta1: float = Field(0.9, ge=0, lt=1, description="First-moment decay")
    beta2: float = Field(0.999, ge=0, lt=1, description="Second-moment decay")
    eps: float = Field(1e-8, gt=0, description="Denominator epsilon")


class SchedulerConfig(BaseModel):
    """Reduce-on-plateau schedule monitoring validation loss."""

    model_config = ConfigDict(extra="forbid")

    patience: int = Field(3, ge=1, description="Epochs without improvement before reducing")
    factor: float = Field(0.1, gt=0, lt=1, description="Multiplicative lr reduction")
    min_lr: float = Field(1e-6, gt=0, description="Learning-rate floor")
    threshold: float = Field(1e-6, ge=0, description="Minimum absolute improvement")


class TrainConfig(BaseModel):
    """Epoch loop settings."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(200, ge=1, description="Number of epochs")
    batch_size: int = Field(4, ge=1, description="Mini-batch size")
    augment: bool = Field(True, description="Random horizontal/vertical flips")


class DataConfig(BaseModel):
    """Dataset split settings."""

    model_config = ConfigDict(extra="forbid")

    split_ratios: list[float] = Field(
        default_factory=lambda: [0.8, 0.1, 0.1], description="Train/val/test proportions"
    )

    @field_validator("split_ratios")
    @classmethod
    def validate_ratios(cls, v: list[float]) -> list[float]:
        if len(v) != 3 or min(v) < 0 or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"expected 3 non-negative ratios summing to 1, got {v}")
        return v


class RunConfig(ModelConfig):
    """Complete, flat-serializable configuration of a run.

    Model keys sit at the top level (``input_size``, ``vit.layers``);
    the remaining sections are ``loss``, ``optim``, ``scheduler``, ``train``
    and ``data``. ``to_text`` writes the format read by ``from_text``.
    """

    seed: int = Field(0, ge=0, description="Seed of every random stream")
    loss: LossConfig = Field(default_factory=LossConfig, description="Loss")
    optim: OptimizerConfig = Field(default_factory=OptimizerConfig, description="Optimizer")
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig, description="LR schedule")
    train: TrainConfig = Field(default_factory=TrainConfig, description="Training loop")
    data: DataConfig = Field(default_factory=DataConfig, description="Dataset split")

    # Presets

    @classmethod
    def desk(cls) -> "RunConfig":
        """Desk-scale defaults: the 32×32 recipe for small end-to-end runs.

        Overfitting 8 synthetic samples in 200 epochs (batch 4, lr 3e-4) uses
        this preset. Gradient checks use the smaller ``micro`` preset instead.
        """
        return cls()

    @classmethod
    def micro(cls) -> "RunConfig":
        """Tiny 16×16 model (widths 2, 4, 8, no dropout) for gradient checks and fast tests.

        Too small to train meaningfully; end-to-end runs use ``desk``.
        """
        return cls(
            input_size=16,
            in_channels=1,
            unet_widths=[2, 4, 8, 8],
            unet_out_channels=2,
            cnn_widths=[2, 4, 8],
            wasp=WaspConfig(in_channels=8, branch_channels=4),
            vit=VitConfig(patch=1, embed_dim=4, layers=1, heads=2, mlp_ratio=2.0),
            decoder_widths=[4, 4, 2],
            transunet_out_channels=2,
            fusion_channels=2,
            dropout_p=0.0,
            train=TrainConfig(batch_size=2),
        )

    # Flat text format

    def to_flat(self) -> dict[str, str]:
        """Every key in canonical order, values formatted as text."""
        return {key: format_value(value) for key, value in flatten_config(self.model_dump()).items()}

    def to_text(self, header: str = "") -> str:
        return format_flat(self.to_flat(), header=header)

    @classmethod
    def keys(cls) -> list[str]:
        """All dotted keys a complete configuration file must contain."""
        return list(flatten_config(cls().model_dump()))

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        """Validate a complete flat mapping of text values.

        Raises:
            ConfigValidationError: Naming the first missing, unknown or invalid key
        """
        defaults = flatten_config(cls().model_dump())
        for key in flat:
            if key not in defaults:
                raise ConfigValidationError(key, "unknown key")
        for key in defaults:
            if key not in flat:
                raise ConfigValidationError(key, "missing")

        typed: dict[str, Any] = {}
        for key, text in flat.items():
            if isinstance(defaults[key], list):
                items = [item.strip() for item in text.split(",")] if text.strip() else []
                typed[key] = items
            else:
                typed[key] = text

        try:
            return cls.model_validate(unflatten_config(typed))
        except PydanticValidationError as e:
            error = e.errors()[0]
            key = ".".join(str(part) for part in error["loc"] if isinstance(part, str))
            logger.error(f"Invalid configuration: {key}: {error['msg']}")
            raise ConfigValidationError(key or "<config>", error["msg"]) from e

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_flat(parse_flat(text))

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        """Read and validate a configuration file.

        Raises:
            ValidationError: If the file cannot be read
            ConfigValidationError: If its content is invalid
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            logger.error(f"Cannot read config {path}: {e}")
            raise ValidationError(f"Cannot read config file {path}: {e}") from e
        return cls.from_text(text)

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply ``key=value`` overrides and revalidate.

        Example:
            >>> RunConfig.micro().with_overrides(["vit.layers=0"]).vit.layers
            0
        """
        if not assignments:
            return self
        flat = self.to_flat()
        for assignment in assignments:
            key, value = parse_override(assignment)
            if key not in flat:
                raise ConfigValidationError(key, "unknown key")
            flat[key] = value
        return RunConfig.from_flat(flat)
