"""Flat ``key = value`` configuration text.

Nested settings are written one per line with dotted keys::

    # comment
    input_size = 32
    vit.layers = 2
    wasp.dilation_rates = 1,2,4,8
    wasp.dense_skip = true

Lists are comma-separated and booleans are ``true`` / ``false``.
"""

import logging
from typing import Any

from trans2unet.utils.exceptions import ConfigValidationError

logger = logging.getLogger(__name__)


def flatten_config(
    data: dict[str, Any],
    separator: str = ".",
    prefix: str = "",
) -> dict[str, Any]:
    """Flatten a nested dictionary into dotted keys.

    Lists are leaf values (they are not expanded into indexed keys).

    Args:
        data: Nested dictionary
        separator: Separator for nested keys
        prefix: Prefix for keys

    Returns:
        Flattened dictionary, keys in insertion order

    Example:
        >>> flatten_config({"seed": 7, "vit": {"layers": 2, "heads": 4}})
        {'seed': 7, 'vit.layers': 2, 'vit.heads': 4}
    """
    flattened: dict[str, Any] = {}

    for key, value in data.items():
        new_key = f"{prefix}{separator}{key}" if prefix else key

        if isinstance(value, dict):
            flattened.update(flatten_config(value, separator, new_key))
        else:
            flattened[new_key] = value

    return flattened


def unflatten_config(
    data: dict[str, Any],
    separator: str = ".",
) -> dict[str, Any]:
    """Rebuild the nested dictionary from dotted keys.

    Example:
        >>> unflatten_config({"seed": "7", "vit.layers": "2"})
        {'seed': '7', 'vit': {'layers': '2'}}
    """
    result: dict[str, Any] = {}

    for key, value in data.items():
        parts = key.split(separator)
        target = result

        for part in parts[:-1]:
            child = target.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigValidationError(key, f"'{part}' is a value, not a section")
            target = child

        if isinstance(target.get(parts[-1]), dict):
            raise ConfigValidationError(key, "is a section, not a value")
        target[parts[-1]] = value

    return result


def format_value(value: Any) -> str:
    """Render one value in the flat text format."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_flat(flat: dict[str, Any], header: str = "") -> str:
    """Render a flat mapping as ``key = value`` lines.

    Args:
        flat: Dotted-key mapping (values are formatted with ``format_value``)
        header: Optional comment block written first (each line gets ``# ``)

    Returns:
        Text ending in a newline
    """
    lines = [f"# {line}".rstrip() for line in header.splitlines()]
    lines.extend(f"{key} = {format_value(value)}" for key, value in flat.items())
    return "\n".join(lines) + "\n"


def parse_flat(text: str) -> dict[str, str]:
    """Parse ``key = value`` text into a flat mapping of strings.

    Blank lines and ``#`` comments are skipped. Values keep their text form;
    typing happens when the mapping is validated.

    Raises:
        ConfigValidationError: On a line without ``=``, an empty key or a
            duplicated key
    """
    flat: dict[str, str] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigValidationError(line, f"line {number} is not of the form 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigValidationError("<empty>", f"line {number} has an empty key")
        if key in flat:
            raise ConfigValidationError(key, f"duplicated on line {number}")
        flat[key] = value

    logger.debug(f"Parsed {len(flat)} configuration keys")
    return flat


def parse_override(assignment: str) -> tuple[str, str]:
    """Split a ``key=value`` command-line override.

    Example:
        >>> parse_override("vit.layers=0")
        ('vit.layers', '0')
    """
    if "=" not in assignment:
        raise ConfigValidationError(assignment, "override must be of the form key=value")
    key, value = (part.strip() for part in assignment.split("=", 1))
    if not key:
        raise ConfigValidationError(assignment, "override has an empty key")
    return key, value
