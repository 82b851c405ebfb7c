"""Binary PGM (P5) and PPM (P6) images with maxval 255."""

import logging
from pathlib import Path

import numpy as np

from trans2unet.utils.exceptions import DatasetError

logger = logging.getLogger(__name__)

_WHITESPACE = b" \t\r\n\v\f"
_CHANNELS = {b"P5": 1, b"P6": 3}


def parse_pnm(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode P5/P6 bytes.

    Args:
        data: Complete file content
        source: Name used in error messages

    Returns:
        uint8 array, ``[H, W]`` for P5 and ``[H, W, 3]`` for P6

    Raises:
        DatasetError: On an unknown magic, a malformed header, a maxval other
            than 255, or truncated pixel data
    """
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        if pos >= len(data):
            raise DatasetError(f"{source}: truncated header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE:
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    pos += 1

    magic = tokens[0]
    if magic not in _CHANNELS:
        raise DatasetError(f"{source}: unsupported image format {magic!r} (expected P5 or P6)")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as e:
        raise DatasetError(f"{source}: malformed header {tokens!r}") from e
    if width < 1 or height < 1:
        raise DatasetError(f"{source}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise DatasetError(f"{source}: maxval must be 255, got {maxval}")

    channels = _CHANNELS[magic]
    expected = width * height * channels
    available = max(len(data) - pos, 0)
    if available < expected:
        raise DatasetError(f"{source}: expected {expected} pixel bytes, found {available}")
    raster = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return raster.reshape(shape).copy()


def read_pnm(path: Path) -> np.ndarray:
    """Read a PGM or PPM file (see ``parse_pnm``).

    Raises:
        DatasetError: If the file cannot be read or decoded
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        logger.error(f"Cannot read image {path}: {e}")
        raise DatasetError(f"Cannot read image {path}: {e}") from e
    return parse_pnm(data, str(path))


def encode_pnm(pixels: np.ndarray) -> bytes:
    """Encode ``[H, W]`` as P5 or ``[H, W, 3]`` as P6."""
    array = np.asarray(pixels)
    if array.dtype != np.uint8:
        raise ValueError(f"Pixels must be uint8, got {array.dtype}")
    if array.ndim == 2:
        magic = b"P5"
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"Pixels must be [H, W] or [H, W, 3], got shape {array.shape}")
    height, width = array.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(array).tobytes()


def write_pnm(path: Path, pixels: np.ndarray) -> None:
    """Write ``pixels`` to ``path``, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pnm(pixels))
    logger.debug(f"Wrote {path}")


def to_pixels(values: np.ndarray) -> np.ndarray:
    """Map reals in [0, 1] to uint8 (×255, rounded, clipped)."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
