"""Pytest configuration and shared fixtures."""

from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest

from trans2unet.data import generate_synthetic
from trans2unet.models import RunConfig, SegmentationSample, Trans2UnetModel
from trans2unet.tensor import precision
from trans2unet.utils.random import stream


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def float64() -> Iterator[None]:
    """Build tensors and parameters in double precision for the test."""
    with precision(np.float64):
        yield


@pytest.fixture
def micro_config() -> RunConfig:
    """Tiny 16×16 configuration trained for two epochs."""
    return RunConfig.micro().with_overrides(["train.epochs=2", "seed=7"])


@pytest.fixture
def micro_model(micro_config: RunConfig) -> Trans2UnetModel:
    """Freshly initialized micro model."""
    return Trans2UnetModel(micro_config, stream(micro_config.seed, "init"))


@pytest.fixture
def synthetic_samples() -> list[SegmentationSample]:
    """Eight synthetic 16×16 samples."""
    return generate_synthetic(8, 16, seed=7)


@pytest.fixture
def micro_config_file(tmp_path: Path, micro_config: RunConfig) -> Path:
    """Micro configuration written in the flat text format."""
    path = tmp_path / "micro.cfg"
    path.write_text(micro_config.to_text(header="micro test config"), encoding="utf-8")
    return path
