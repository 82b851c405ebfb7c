"""Adam optimizer and reduce-on-plateau learning-rate schedule."""

import logging
from collections.abc import Iterable
from typing import Optional

import numpy as np

from trans2unet.models.config import OptimizerConfig, SchedulerConfig
from trans2unet.nn import Parameter
from trans2unet.utils.exceptions import CheckpointError, NumericalError, ShapeError

logger = logging.getLogger(__name__)


class Adam:
    """Adam with bias-corrected moments.

    ``m ← β1·m + (1−β1)·g``, ``v ← β2·v + (1−β2)·g²``,
    ``θ ← θ − lr · m̂ / (√v̂ + eps)``. A parameter without a gradient is
    stepped with a zero gradient.

    Args:
        named_parameters: ``(name, parameter)`` pairs, e.g. ``model.named_parameters()``
        config: Learning rate, betas and eps

    Example:
        >>> optimizer = Adam(model.named_parameters(), OptimizerConfig(lr=3e-4))
        >>> loss.backward()
        >>> optimizer.step()
    """

    def __init__(
        self, named_parameters: Iterable[tuple[str, Parameter]], config: OptimizerConfig
    ) -> None:
        self.params: dict[str, Parameter] = dict(named_parameters)
        self.lr = config.lr
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def _gradient(self, name: str, param: Parameter) -> np.ndarray:
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        if grad.shape != param.data.shape:
            raise ShapeError(
                f"Gradient of '{name}' has shape {grad.shape}, parameter has {param.data.shape}"
            )
        if not np.isfinite(grad).all():
            logger.error(f"Non-finite gradient in parameter '{name}'")
            raise NumericalError(f"Non-finite gradient in parameter '{name}'", parameter=name)
        return grad

    def step(self) -> None:
        """Apply one update to every parameter.

        Raises:
            NumericalError: If any gradient holds NaN or Inf (no parameter is changed)
            ShapeError: If a gradient does not match its parameter
        """
        grads = {name: self._gradient(name, p) for name, p in self.params.items()}
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, param in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param.data -= (self.lr * update).astype(param.data.dtype)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moments keyed ``optim.m.<name>`` / ``optim.v.<name>``."""
        state: dict[str, np.ndarray] = {}
        for name in self.params:
            state[f"optim.m.{name}"] = self.m[name].copy()
            state[f"optim.v.{name}"] = self.v[name].copy()
        return state

    def load_state_tensors(self, state: dict[str, np.ndarray], step: int) -> None:
        """Restore moments written by ``state_tensors``.

        Raises:
            CheckpointError: If a moment is missing or has the wrong shape
        """
        for name, param in self.params.items():
            for kind, target in (("m", self.m[name]), ("v", self.v[name])):
                key = f"optim.{kind}.{name}"
                if key not in state:
                    raise CheckpointError(f"Checkpoint is missing optimizer tensor '{key}'")
                if state[key].shape != param.data.shape:
                    raise CheckpointError(
                        f"Optimizer tensor '{key}' has shape {state[key].shape}, "
                        f"expected {param.data.shape}"
                    )
                target[...] = state[key]
        self.t = step


class PlateauScheduler:
    """Reduce the learning rate when validation loss stops improving.

    A value improves when it is below the best so far by at least
    ``threshold``. After ``patience`` consecutive epochs without improvement
    the rate becomes ``max(lr · factor, min_lr)`` and the counter restarts.
    The rate never increases.

    Example:
        >>> sched = PlateauScheduler(SchedulerConfig(), lr=3e-4)
        >>> for loss in (1.0, 0.9, 0.91, 0.92, 0.93):
        ...     lr = sched.step(loss)
        >>> lr  # 3e-5
    """

    def __init__(self, config: SchedulerConfig, lr: float) -> None:
        self.patience = config.patience
        self.factor = config.factor
        self.min_lr = config.min_lr
        self.threshold = config.threshold
        self.lr = lr
        self.best: Optional[float] = None
        self.epochs_since_improvement = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss and return the learning rate to use next."""
        if self.best is None or val_loss < self.best - self.threshold:
            self.best = val_loss
            self.epochs_since_improvement = 0
            return self.lr

        self.epochs_since_improvement += 1
        if self.epochs_since_improvement >= self.patience:
            reduced = max(self.lr * self.factor, self.min_lr)
            if reduced < self.lr:
                logger.info(f"Reducing learning rate from {self.lr:.3g} to {reduced:.3g}")
                self.lr = reduced
            self.epochs_since_improvement = 0
        return self.lr
