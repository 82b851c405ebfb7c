"""Module and parameter registry.

Modules register parameters, buffers and child modules through attribute
assignment, in the order they are assigned. ``named_parameters`` walks that
order, so every learnable tensor has one stable dotted name
(e.g. ``transunet.vit.0.attn.proj.weight``).
"""

import logging
from collections.abc import Iterator
from typing import Any, Optional

import numpy as np

from trans2unet.tensor import Tensor
from trans2unet.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """Learnable leaf tensor (always ``requires_grad=True``)."""

    def __init__(self, data: Any) -> None:
        super().__init__(data, requires_grad=True)


class Module:
    """Base class for every layer, block and model.

    Subclasses implement ``forward``; calling the module runs it.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        """Register non-learnable state saved with the model (e.g. BN statistics)."""
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} does not implement forward")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    # Traversal

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        """Yield ``(dotted_name, module)`` for this module and all descendants."""
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        """Yield ``(dotted_name, parameter)`` in registration order."""
        for module_name, module in self.named_modules(prefix):
            for name, param in module._parameters.items():
                yield (f"{module_name}.{name}" if module_name else name), param

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(dotted_name, array)`` for every registered buffer."""
        for module_name, module in self.named_modules(prefix):
            for name, array in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), array

    def parameters(self) -> list[Parameter]:
        """Return all parameters in registration order."""
        return [param for _, param in self.named_parameters()]

    def num_parameters(self) -> int:
        """Total number of learnable scalars."""
        return int(sum(param.size for param in self.parameters()))

    # Modes

    def train(self, mode: bool = True) -> "Module":
        """Switch this module and its children to training (or eval) mode."""
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        """Switch to evaluation mode (BN running stats, no dropout)."""
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def set_dropout_rng(self, rng: Optional[np.random.Generator]) -> None:
        """Give every dropout layer the generator it draws masks from."""
        for _, module in self.named_modules():
            if hasattr(module, "rng") and hasattr(module, "p"):
                module.rng = rng

    # State

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = {name: param.data.copy() for name, param in self.named_parameters()}
        state.update({name: array.copy() for name, array in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters and buffers in place.

        Raises:
            CheckpointError: If a name is missing or unexpected, or a shape differs
        """
        targets: dict[str, np.ndarray] = {
            name: param.data for name, param in self.named_parameters()
        }
        targets.update(dict(self.named_buffers()))

        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing:
            raise CheckpointError(f"Checkpoint is missing tensors: {', '.join(missing[:5])}")
        if unexpected:
            raise CheckpointError(f"Checkpoint has unexpected tensors: {', '.join(unexpected[:5])}")

        for name, target in targets.items():
            source = state[name]
            if source.shape != target.shape:
                raise CheckpointError(
                    f"Tensor '{name}' has shape {source.shape}, model expects {target.shape}"
                )
            target[...] = source
        logger.debug(f"Loaded {len(targets)} tensors into {type(self).__name__}")


class ModuleList(Module):
    """Ordered container whose children are named ``0``, ``1``, ..."""

    def __init__(self, modules: Optional[list[Module]] = None) -> None:
        super().__init__()
        self._items: list[Module] = []
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]
