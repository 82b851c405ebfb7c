"""Registry of named gradient-check suites.

Every differentiable operation has a suite, as do the composite blocks and
the micro Trans2Unet model. Suites build their inputs in float64 from the
``gradcheck`` random stream, so a suite's result depends only on the seed.
Non-scalar outputs are reduced to a scalar by a fixed random projection
``Σ out · R``, which exercises every output entry with a distinct weight.
"""

import logging
from collections.abc import Callable, Iterable, Sequence
from typing import Optional

import numpy as np

from trans2unet.gradcheck.harness import GradCheckResult, check_gradients
from trans2unet.models.config import LossConfig, RunConfig
from trans2unet.models.trans2unet import Trans2UnetModel, TransUnetBranch, UnetBranch
from trans2unet.nn import Aspp, ConvBlock, Module, TransformerBlock, Wasp
from trans2unet.tensor import Tensor, no_grad, ops, precision
from trans2unet.training.losses import bce_loss, dice_loss, segmentation_loss
from trans2unet.utils.exceptions import GradientCheckError, ValidationError
from trans2unet.utils.random import stream

logger = logging.getLogger(__name__)

Case = tuple[Callable[[], Tensor], dict[str, Tensor]]
Builder = Callable[[np.random.Generator], Case]

MODULE_ENTRIES = 6
MODEL_ENTRIES = 10


class GradCheckSuite:
    """A named check: a builder of ``(fn, inputs)`` and its sampling budget."""

    def __init__(self, name: str, build: Builder, max_entries: Optional[int] = None) -> None:
        self.name = name
        self.build = build
        self.max_entries = max_entries

    def __repr__(self) -> str:
        return f"GradCheckSuite({self.name!r}, max_entries={self.max_entries})"


def _param(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


def _uniform(rng: np.random.Generator, shape: Sequence[int], low: float = -1.0, high: float = 1.0) -> Tensor:
    return _param(rng.uniform(low, high, size=shape))


def _off_kinks(rng: np.random.Generator, shape: Sequence[int]) -> Tensor:
    """Values in ±([0.02, 0.48] ∪ [0.52, 0.98]), clear of 0 and ±0.5."""
    magnitude = rng.uniform(0.02, 0.48, size=shape) + 0.5 * (rng.random(shape) < 0.5)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return _param(sign * magnitude)


def _projected(forward: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    with no_grad():
        shape = forward().shape
    weights = Tensor(rng.normal(size=shape))
    return lambda: ops.sum(ops.mul(forward(), weights))


def _elementwise(forward: Callable[..., Tensor], *inputs: Tensor, rng: np.random.Generator) -> Case:
    names = ["a", "b", "c"][: len(inputs)] if len(inputs) > 1 else ["x"]
    return _projected(lambda: forward(*inputs), rng), dict(zip(names, inputs))


def _module_case(module: Module, x: Tensor, rng: np.random.Generator) -> Case:
    module.train()
    inputs = {"x": x, **dict(module.named_parameters())}
    return _projected(lambda: module(x), rng), inputs


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _add(rng: np.random.Generator) -> Case:
    return _elementwise(ops.add, _uniform(rng, (3, 4)), _uniform(rng, (3, 4)), rng=rng)


def _sub(rng: np.random.Generator) -> Case:
    return _elementwise(ops.sub, _uniform(rng, (3, 4)), _uniform(rng, (3, 4)), rng=rng)


def _mul(rng: np.random.Generator) -> Case:
    return _elementwise(ops.mul, _uniform(rng, (3, 4)), _uniform(rng, (3, 4)), rng=rng)


def _div(rng: np.random.Generator) -> Case:
    denominator = _param(rng.uniform(0.5, 2.0, size=(3, 4)) * np.where(rng.random((3, 4)) < 0.5, -1, 1))
    return _elementwise(ops.div, _uniform(rng, (3, 4)), denominator, rng=rng)


def _neg(rng: np.random.Generator) -> Case:
    return _elementwise(ops.neg, _uniform(rng, (3, 4)), rng=rng)


def _scale(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.scale(x, -1.7), _uniform(rng, (3, 4)), rng=rng)


def _shift(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.shift(x, 0.3), _uniform(rng, (3, 4)), rng=rng)


def _log(rng: np.random.Generator) -> Case:
    return _elementwise(ops.log, _uniform(rng, (3, 4), 0.5, 2.0), rng=rng)


def _clip(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.clip(x, -0.5, 0.5), _off_kinks(rng, (3, 4)), rng=rng)


def _sum(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.sum(x, axis=1, keepdims=True), _uniform(rng, (2, 3, 4)), rng=rng)


def _mean(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.mean(x, axis=(0, 2)), _uniform(rng, (2, 3, 4)), rng=rng)


def _reshape(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.reshape(x, (4, 6)), _uniform(rng, (2, 3, 4)), rng=rng)


def _transpose(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.transpose(x, (2, 0, 1)), _uniform(rng, (2, 3, 4)), rng=rng)


def _broadcast_to(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.broadcast_to(x, (2, 3, 4)), _uniform(rng, (1, 3, 1)), rng=rng)


def _concat(rng: np.random.Generator) -> Case:
    return _elementwise(
        lambda a, b: ops.concat([a, b], axis=1),
        _uniform(rng, (2, 2, 3)),
        _uniform(rng, (2, 4, 3)),
        rng=rng,
    )


def _slice_axis(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.slice_axis(x, 1, 1, 3), _uniform(rng, (2, 4, 3)), rng=rng)


def _matmul(rng: np.random.Generator) -> Case:
    return _elementwise(ops.matmul, _uniform(rng, (2, 3, 4)), _uniform(rng, (4, 5)), rng=rng)


def _conv2d(rng: np.random.Generator) -> Case:
    x, w, b = _uniform(rng, (2, 3, 6, 6)), _uniform(rng, (4, 3, 3, 3)), _uniform(rng, (4,))
    return _projected(lambda: ops.conv2d(x, w, b, dilation=2), rng), {"x": x, "weight": w, "bias": b}


def _conv2d_strided(rng: np.random.Generator) -> Case:
    x, w = _uniform(rng, (2, 3, 6, 6)), _uniform(rng, (4, 3, 2, 2))
    return _projected(lambda: ops.conv2d(x, w, stride=2, padding="valid"), rng), {"x": x, "weight": w}


def _maxpool2d(rng: np.random.Generator) -> Case:
    # distinct values spaced far wider than any step, so no window has a tie
    shape = (2, 2, 4, 4)
    x = _param(rng.permutation(int(np.prod(shape))).reshape(shape) * 0.05)
    return _elementwise(ops.maxpool2d, x, rng=rng)


def _upsample_bilinear(rng: np.random.Generator) -> Case:
    return _elementwise(lambda x: ops.upsample_bilinear(x, 2), _uniform(rng, (1, 2, 3, 3)), rng=rng)


def _global_avg_pool(rng: np.random.Generator) -> Case:
    return _elementwise(ops.global_avg_pool, _uniform(rng, (2, 3, 4, 4)), rng=rng)


def _layernorm(rng: np.random.Generator) -> Case:
    x, gamma, beta = _uniform(rng, (2, 3, 5)), _uniform(rng, (5,), 0.5, 1.5), _uniform(rng, (5,))
    return _projected(lambda: ops.layernorm(x, gamma, beta), rng), {"x": x, "gamma": gamma, "beta": beta}


def _batchnorm2d(rng: np.random.Generator) -> Case:
    x, gamma, beta = _uniform(rng, (2, 3, 3, 3)), _uniform(rng, (3,), 0.5, 1.5), _uniform(rng, (3,))
    running_mean, running_var = np.zeros(3), np.ones(3)

    def forward() -> Tensor:
        return ops.batchnorm2d(x, gamma, beta, running_mean, running_var, training=True)

    return _projected(forward, rng), {"x": x, "gamma": gamma, "beta": beta}


def _batchnorm2d_eval(rng: np.random.Generator) -> Case:
    x, gamma, beta = _uniform(rng, (2, 3, 3, 3)), _uniform(rng, (3,), 0.5, 1.5), _uniform(rng, (3,))
    running_mean, running_var = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)

    def forward() -> Tensor:
        return ops.batchnorm2d(x, gamma, beta, running_mean, running_var, training=False)

    return _projected(forward, rng), {"x": x, "gamma": gamma, "beta": beta}


def _softmax(rng: np.random.Generator) -> Case:
    return _elementwise(ops.softmax, _uniform(rng, (2, 3, 5), -2.0, 2.0), rng=rng)


def _relu(rng: np.random.Generator) -> Case:
    return _elementwise(ops.relu, _off_kinks(rng, (3, 4)), rng=rng)


def _gelu(rng: np.random.Generator) -> Case:
    return _elementwise(ops.gelu, _uniform(rng, (3, 4), -3.0, 3.0), rng=rng)


def _sigmoid(rng: np.random.Generator) -> Case:
    return _elementwise(ops.sigmoid, _uniform(rng, (3, 4), -4.0, 4.0), rng=rng)


def _dropout(rng: np.random.Generator) -> Case:
    mask_seed = int(rng.integers(2**31))
    # same mask on every evaluation
    return _elementwise(
        lambda x: ops.dropout(x, 0.5, training=True, rng=np.random.default_rng(mask_seed)),
        _uniform(rng, (3, 4)),
        rng=rng,
    )


def _bce_loss(rng: np.random.Generator) -> Case:
    prob = _uniform(rng, (2, 1, 4, 4), 0.05, 0.95)
    target = Tensor((rng.random((2, 1, 4, 4)) < 0.5).astype(np.float64))
    return (lambda: bce_loss(prob, target)), {"prob": prob}


def _dice_loss(rng: np.random.Generator) -> Case:
    prob = _uniform(rng, (2, 1, 4, 4), 0.05, 0.95)
    target = Tensor((rng.random((2, 1, 4, 4)) < 0.5).astype(np.float64))
    return (lambda: dice_loss(prob, target)), {"prob": prob}


# ---------------------------------------------------------------------------
# Blocks and models
# ---------------------------------------------------------------------------


def _conv_block(rng: np.random.Generator) -> Case:
    return _module_case(ConvBlock(3, 4, rng, dilation=2), _uniform(rng, (2, 3, 6, 6)), rng)


def _transformer_block(rng: np.random.Generator) -> Case:
    return _module_case(TransformerBlock(8, 2, 2.0, rng, 0.0), _uniform(rng, (2, 5, 8)), rng)


def _wasp(rng: np.random.Generator) -> Case:
    return _module_case(Wasp(4, 3, (1, 2, 4, 8), False, rng), _uniform(rng, (2, 4, 4, 4)), rng)


def _wasp_kc(rng: np.random.Generator) -> Case:
    return _module_case(Wasp(4, 3, (1, 2, 4, 8), True, rng), _uniform(rng, (2, 4, 4, 4)), rng)


def _aspp(rng: np.random.Generator) -> Case:
    return _module_case(Aspp(4, 3, (1, 2, 4, 8), rng), _uniform(rng, (2, 4, 4, 4)), rng)


def _unet_branch(rng: np.random.Generator) -> Case:
    return _module_case(UnetBranch(1, (2, 4, 8, 8), 2, rng), _uniform(rng, (1, 1, 16, 16), 0.0, 1.0), rng)


def _transunet_branch(rng: np.random.Generator) -> Case:
    return _module_case(TransUnetBranch(RunConfig.micro(), rng), _uniform(rng, (1, 1, 16, 16), 0.0, 1.0), rng)


def _micro_model(rng: np.random.Generator) -> Case:
    config = RunConfig.micro()
    model = Trans2UnetModel(config, rng)
    model.train()
    x = _uniform(rng, (1, 1, 16, 16), 0.0, 1.0)
    target = Tensor((rng.random((1, 1, 16, 16)) < 0.3).astype(np.float64))
    loss_config = LossConfig(kind="bce_plus_dice")
    inputs = {"x": x, **dict(model.named_parameters())}
    return (lambda: segmentation_loss(model(x), target, loss_config)), inputs


SUITES: dict[str, GradCheckSuite] = {
    suite.name: suite
    for suite in [
        GradCheckSuite("add", _add),
        GradCheckSuite("sub", _sub),
        GradCheckSuite("mul", _mul),
        GradCheckSuite("div", _div),
        GradCheckSuite("neg", _neg),
        GradCheckSuite("scale", _scale),
        GradCheckSuite("shift", _shift),
        GradCheckSuite("log", _log),
        GradCheckSuite("clip", _clip),
        GradCheckSuite("sum", _sum),
        GradCheckSuite("mean", _mean),
        GradCheckSuite("reshape", _reshape),
        GradCheckSuite("transpose", _transpose),
        GradCheckSuite("broadcast_to", _broadcast_to),
        GradCheckSuite("concat", _concat),
        GradCheckSuite("slice_axis", _slice_axis),
        GradCheckSuite("matmul", _matmul),
        GradCheckSuite("conv2d", _conv2d),
        GradCheckSuite("conv2d_strided", _conv2d_strided),
        GradCheckSuite("maxpool2d", _maxpool2d),
        GradCheckSuite("upsample_bilinear", _upsample_bilinear),
        GradCheckSuite("global_avg_pool", _global_avg_pool),
        GradCheckSuite("layernorm", _layernorm),
        GradCheckSuite("batchnorm2d", _batchnorm2d),
        GradCheckSuite("batchnorm2d_eval", _batchnorm2d_eval),
        GradCheckSuite("softmax", _softmax),
        GradCheckSuite("relu", _relu),
        GradCheckSuite("gelu", _gelu),
        GradCheckSuite("sigmoid", _sigmoid),
        GradCheckSuite("dropout", _dropout),
        GradCheckSuite("bce_loss", _bce_loss),
        GradCheckSuite("dice_loss", _dice_loss),
        GradCheckSuite("conv_block", _conv_block, MODULE_ENTRIES),
        GradCheckSuite("transformer_block", _transformer_block, MODULE_ENTRIES),
        GradCheckSuite("wasp", _wasp, MODULE_ENTRIES),
        GradCheckSuite("wasp_kc", _wasp_kc, MODULE_ENTRIES),
        GradCheckSuite("aspp", _aspp, MODULE_ENTRIES),
        GradCheckSuite("unet_branch", _unet_branch, MODEL_ENTRIES),
        GradCheckSuite("transunet_branch", _transunet_branch, MODEL_ENTRIES),
        GradCheckSuite("micro_model", _micro_model, MODEL_ENTRIES),
    ]
}


def suite_names() -> list[str]:
    """Registered suite names in registration order."""
    return list(SUITES)


def resolve_suites(name: str) -> list[str]:
    """Expand ``"all"`` or validate a single suite name.

    Raises:
        ValidationError: If the name is not registered
    """
    if name == "all":
        return suite_names()
    if name not in SUITES:
        raise ValidationError(f"Unknown gradient-check suite '{name}'. Available: all, {', '.join(SUITES)}")
    return [name]


def run_suite(name: str, seed: int = 0, corrupt: bool = False) -> GradCheckResult:
    """Build and check one suite in float64.

    Args:
        name: Registered suite name
        seed: Seed of the ``gradcheck`` stream
        corrupt: Perturb the analytic gradient (harness self-test)

    Returns:
        GradCheckResult of the suite
    """
    resolve_suites(name)
    suite = SUITES[name]
    rng = stream(seed, "gradcheck")
    with precision(np.float64):
        fn, inputs = suite.build(rng)
        return check_gradients(name, fn, inputs, rng, max_entries=suite.max_entries, corrupt=corrupt)


def run_suites(names: Iterable[str], seed: int = 0, corrupt: bool = False) -> list[GradCheckResult]:
    """Run several suites with the same seed."""
    return [run_suite(name, seed, corrupt) for name in names]


def require_passing(results: Sequence[GradCheckResult]) -> None:
    """Raise if any suite exceeded its tolerance.

    Raises:
        GradientCheckError: Naming every failing suite and its error
    """
    failures = [r for r in results if not r.passed]
    if failures:
        details = ", ".join(f"{r.name} ({r.max_rel_error:.3e})" for r in failures)
        logger.error(f"Gradient check failed for {details}")
        raise GradientCheckError(f"Gradient check exceeded tolerance for: {details}")
