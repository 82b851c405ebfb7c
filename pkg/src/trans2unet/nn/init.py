"""Seeded weight initializers.

All initializers draw from the generator they are given (the run's ``init``
stream), so a fixed seed and config reproduce the same weights.
"""

import numpy as np

TRANSFORMER_STD = 0.02


def kaiming_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """He/Kaiming uniform init with ReLU gain, fan-in mode.

    Args:
        shape: Weight shape, ``[out, in, kh, kw]`` for convolutions
        rng: Generator to draw from

    Returns:
        float64 array with values in ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``
    """
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def trunc_normal(
    shape: tuple[int, ...], rng: np.random.Generator, std: float = TRANSFORMER_STD
) -> np.ndarray:
    """Normal(0, std) truncated to ``[-2 std, 2 std]`` by resampling."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2.0 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2.0 * std
    return values


def zeros(shape: tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape)


def ones(shape: tuple[int, ...]) -> np.ndarray:
    return np.ones(shape)
