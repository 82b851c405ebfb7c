"""Seeded random streams.

All randomness in trans2unet flows from a single integer seed. Components draw
from *named* sub-streams so they can be reproduced independently: the stream
for ``name`` is a numpy ``PCG64`` generator seeded with
``SeedSequence([seed, crc32(name)])``.
"""

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "dropout", "synth", "augment", "split", "gradcheck")


def stream(seed: int, name: str) -> np.random.Generator:
    """Create the named random stream for a seed.

    Args:
        seed: Run seed (non-negative)
        name: Stream name (e.g. "init", "shuffle")

    Returns:
        Independent numpy Generator

    Example:
        >>> rng = stream(7, "shuffle")
        >>> rng.permutation(4).tolist()  # doctest: +SKIP
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got: {seed}")
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))
