"""Finite-difference gradient checking.

Analytic gradients from one backward pass are compared with central
differences ``(f(x + h) − f(x − h)) / 2h`` entry by entry. The relative
error of an entry is ``|a − n| / max(|a|, |n|, 1e-3)``. An entry that fails
at the first step size is retried at the smaller ones and keeps its best
error, so a perturbation that happens to cross a ReLU or max-pool kink does
not fail the check while a wrong gradient fails at every step.
"""

import logging
from collections.abc import Callable, Sequence
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from trans2unet.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEPS = (1e-4, 1e-5, 1e-6)
ERROR_FLOOR = 1e-3


class GradCheckResult(BaseModel):
    """Outcome of checking one function."""

    name: str = Field(..., description="Suite name")
    max_rel_error: float = Field(..., description="Largest per-entry relative error")
    worst_input: Optional[str] = Field(None, description="Input holding the worst entry")
    entries: int = Field(..., description="Number of checked entries")
    tolerance: float = Field(TOLERANCE, description="Pass threshold")

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def _evaluate(fn: Callable[[], Tensor]) -> float:
    with no_grad():
        return fn().item()


def check_gradients(
    name: str,
    fn: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    rng: np.random.Generator,
    max_entries: Optional[int] = None,
    tolerance: float = TOLERANCE,
    steps: Sequence[float] = STEPS,
    corrupt: bool = False,
) -> GradCheckResult:
    """Compare analytic and numerical gradients of a scalar function.

    Args:
        name: Label of the check
        fn: Recomputes the scalar from the current values of ``inputs``
        inputs: Tensors (``requires_grad=True``) to differentiate against
        rng: Picks the sampled entries when a tensor exceeds ``max_entries``
        max_entries: Entries checked per input (None checks all)
        tolerance: Maximum allowed relative error
        steps: Step sizes tried in order
        corrupt: Perturb the first analytic entry (harness self-test)

    Returns:
        GradCheckResult with the worst relative error

    Example:
        >>> x = Tensor(rng.normal(size=4), requires_grad=True)
        >>> check_gradients("gelu", lambda: ops.gelu(x).sum(), {"x": x}, rng).passed
        True
    """
    for tensor in inputs.values():
        tensor.zero_grad()
    fn().backward()
    analytic = {
        key: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for key, t in inputs.items()
    }
    if corrupt and analytic:
        first = next(iter(analytic.values()))
        first.reshape(-1)[0] += 1.0

    worst, worst_input, checked = 0.0, None, 0
    for key, tensor in inputs.items():
        flat = tensor.data.reshape(-1)
        grad = analytic[key].reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            indices = np.arange(flat.size)
        for index in indices:
            best = np.inf
            original = flat[index]
            for h in steps:
                flat[index] = original + h
                plus = _evaluate(fn)
                flat[index] = original - h
                minus = _evaluate(fn)
                flat[index] = original
                best = min(best, relative_error(float(grad[index]), (plus - minus) / (2.0 * h)))
                if best < tolerance:
                    break
            checked += 1
            if best > worst:
                worst, worst_input = best, key

    result = GradCheckResult(
        name=name, max_rel_error=worst, worst_input=worst_input, entries=checked, tolerance=tolerance
    )
    logger.info(f"Gradient check {name}: max relative error {worst:.3e} over {checked} entries")
    return result
