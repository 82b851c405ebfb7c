"""JSON export for evaluation aggregates and run summaries."""

import json
import logging
import math
from pathlib import Path
from typing import Any

from trans2unet.utils.exceptions import Trans2UnetError

logger = logging.getLogger(__name__)


def _finite(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


def format_json(data: Any, indent: int = 2) -> str:
    """Format data as a JSON string; NaN and infinities become null.

    Example:
        >>> format_json({"dsc": 0.9})
        '{\\n  "dsc": 0.9\\n}'
    """
    return json.dumps(_finite(data), indent=indent, ensure_ascii=False, default=str)


def export_to_json(data: Any, filepath: Path, indent: int = 2) -> None:
    """Export data to a JSON file.

    Raises:
        Trans2UnetError: If export fails
    """
    try:
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        filepath.write_text(format_json(data, indent) + "\n", encoding="utf-8")
        logger.info(f"Exported JSON to {filepath}")
    except OSError as e:
        logger.error(f"Failed to export JSON: {str(e)}")
        raise Trans2UnetError(f"Failed to export JSON: {str(e)}") from e
