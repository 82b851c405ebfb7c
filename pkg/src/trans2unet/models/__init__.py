"""Configuration models, records and the Trans2Unet network."""

from trans2unet.models.config import (
    DataConfig,
    LossConfig,
    ModelConfig,
    OptimizerConfig,
    RunConfig,
    SchedulerConfig,
    TrainConfig,
    VitConfig,
    WaspConfig,
)
from trans2unet.models.records import (
    ConfusionCounts,
    DatasetSplit,
    EpochRecord,
    EvaluationReport,
    RunSummary,
    SegmentationSample,
)
from trans2unet.models.trans2unet import (
    DoubleConv,
    Trans2UnetModel,
    TransUnetBranch,
    UnetBranch,
    count_parameters,
    parameter_breakdown,
)

__all__ = [
    "ConfusionCounts",
    "DataConfig",
    "DatasetSplit",
    "DoubleConv",
    "EpochRecord",
    "EvaluationReport",
    "LossConfig",
    "ModelConfig",
    "OptimizerConfig",
    "RunConfig",
    "RunSummary",
    "SchedulerConfig",
    "SegmentationSample",
    "TrainConfig",
    "Trans2UnetModel",
    "TransUnetBranch",
    "UnetBranch",
    "VitConfig",
    "WaspConfig",
    "count_parameters",
    "parameter_breakdown",
]
