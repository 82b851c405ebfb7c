"""Mutable state of a training run."""

from typing import Optional

from trans2unet.models.config import RunConfig
from trans2unet.models.records import EpochRecord
from trans2unet.nn import Module
from trans2unet.training.optim import Adam, PlateauScheduler


class TrainState:
    """Model, optimizer, scheduler and epoch log of one run.

    Args:
        model: Network being trained
        config: Run configuration (optimizer and scheduler sections are read)
    """

    def __init__(self, model: Module, config: RunConfig) -> None:
        self.model = model
        self.config = config
        self.optimizer = Adam(model.named_parameters(), config.optim)
        self.scheduler = PlateauScheduler(config.scheduler, config.optim.lr)
        self.epoch = 0
        self.records: list[EpochRecord] = []
        self.best_val_dsc = float("-inf")
        self.best_epoch: Optional[int] = None

    @property
    def lr(self) -> float:
        return self.optimizer.lr
