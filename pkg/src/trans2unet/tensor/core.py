"""Dense tensor with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous numpy array. Every differentiable operation is
a ``Function`` subclass: ``Function.apply`` runs ``forward`` on raw arrays and,
when gradients are enabled and any input requires them, links the result to
the function so ``backward`` can later walk the recorded ``Graph``.
"""

import logging
import threading
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any, Optional, Union

import numpy as np

from trans2unet.utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]
Scalar = Union[float, int]
Axis = Union[int, tuple[int, ...]]

# Graphs are built and traversed per thread.
_local = threading.local()
_default_dtype: np.dtype = np.dtype(np.float32)


def is_grad_enabled() -> bool:
    """Return whether operations currently record a graph."""
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (current thread only).

    Example:
        >>> with no_grad():
        ...     logits = model(x)
    """
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def get_default_dtype() -> np.dtype:
    """Return the dtype new tensors and parameters are stored in."""
    return _default_dtype


def set_default_dtype(dtype: Any) -> None:
    """Set the storage dtype for new tensors (float32 or float64)."""
    global _default_dtype
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Default dtype must be float32 or float64, got: {resolved}")
    _default_dtype = resolved


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Temporarily switch the default dtype.

    Gradient checks build their models under ``precision(np.float64)``.
    """
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """N-dimensional value node of a reverse-mode computation graph.

    Args:
        data: Array-like values (copied into a contiguous array)
        requires_grad: Accumulate gradients into ``grad`` during backward
        dtype: Storage dtype (default: the current default dtype)
        name: Optional label used in diagnostics

    Example:
        >>> x = Tensor([1.0, 2.0], requires_grad=True)
        >>> (x * x).sum().backward()
        >>> x.grad
        array([2., 4.], dtype=float32)
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
        name: Optional[str] = None,
    ) -> None:
        self.data: np.ndarray = np.array(
            data, dtype=dtype if dtype is not None else _default_dtype, order="C"
        )
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional[Function] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        """Wrap an operation result without copying or casting."""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, order="C")
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        tensor._ctx = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        """Tensor shape."""
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        """Storage dtype."""
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """True when the tensor was not produced by a recorded operation."""
        return self._ctx is None

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Return a graph-free tensor sharing no state with this one."""
        return Tensor._wrap(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> "Graph":
        """Backpropagate from this scalar into every reachable leaf.

        Returns:
            The traversed Graph

        Raises:
            ShapeError: If the tensor holds more than one element
        """
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        graph = Graph.trace(self)
        graph.backward(self)
        return graph

    # Operator sugar; implementations live in trans2unet.tensor.ops.

    def __add__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.add(self, other) if isinstance(other, Tensor) else ops.shift(self, other)

    def __radd__(self, other: Scalar) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.shift(self, other)

    def __sub__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.sub(self, other) if isinstance(other, Tensor) else ops.shift(self, -other)

    def __rsub__(self, other: Scalar) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.shift(ops.neg(self), other)

    def __mul__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    def __rmul__(self, other: Scalar) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.scale(self, other)

    def __truediv__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.div(self, other) if isinstance(other, Tensor) else ops.scale(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        from trans2unet.tensor import ops

        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from trans2unet.tensor import ops

        return ops.matmul(self, other)

    def sum(self, axis: Optional[Axis] = None, keepdims: bool = False) -> "Tensor":
        """Sum over ``axis`` (all axes by default)."""
        from trans2unet.tensor import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Axis] = None, keepdims: bool = False) -> "Tensor":
        """Mean over ``axis`` (all axes by default)."""
        from trans2unet.tensor import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        """Reshape without changing the number of elements."""
        from trans2unet.tensor import ops

        if len(shape) == 1 and isinstance(shape[0], tuple):
            return ops.reshape(self, shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        """Permute axes."""
        from trans2unet.tensor import ops

        return ops.transpose(self, axes if axes else None)

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag})"


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays (saving whatever the
    backward pass needs on ``self``) and ``backward``, which maps the gradient
    of the output to one gradient (or ``None``) per input tensor.
    """

    def __init__(self) -> None:
        self.parents: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        """Run the operation and record it when gradients are required."""
        fn = cls()
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor._wrap(out, requires_grad)
        if requires_grad:
            fn.parents = tensors
            result._ctx = fn
        return result


class Graph:
    """Topologically ordered record of the operations behind a tensor.

    ``nodes`` lists every gradient-requiring tensor reachable from the root,
    inputs before the outputs computed from them.
    """

    def __init__(self, nodes: list[Tensor]) -> None:
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        """Collect the graph below ``root`` in topological order."""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def backward(self, root: Tensor) -> None:
        """Visit each node once in reverse topological order.

        Leaf tensors accumulate into ``grad``; intermediate gradients are
        released as soon as they have been propagated.
        """
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                node._accumulate(grad)
                continue
            parent_grads = node._ctx.backward(grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.data.shape:
                    raise ShapeError(
                        f"{type(node._ctx).__name__} produced gradient of shape "
                        f"{parent_grad.shape} for input of shape {parent.data.shape}"
                    )
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
        logger.debug(f"Backward pass visited {len(self.nodes)} nodes")
