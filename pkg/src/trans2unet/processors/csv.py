"""CSV export functionality for trans2unet."""

import logging
from pathlib import Path
from typing import Any, Optional, TextIO

import pandas as pd

from trans2unet.utils.exceptions import Trans2UnetError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"


def export_to_csv(
    df: pd.DataFrame,
    filepath: Path,
    metadata: Optional[dict[str, Any]] = None,
    float_format: str = FLOAT_FORMAT,
    **kwargs: Any,
) -> None:
    """Export DataFrame to CSV with an optional metadata comment header.

    Args:
        df: DataFrame to export
        filepath: Output file path
        metadata: Optional metadata written as ``# key: value`` lines
        float_format: Format applied to float columns
        **kwargs: Additional arguments passed to df.to_csv()

    Raises:
        Trans2UnetError: If export fails

    Example:
        >>> df = pd.DataFrame({"variant": ["transunet"], "dsc": [0.81]})
        >>> export_to_csv(df, Path("ablation.csv"), metadata={"split_hash": "ab12"})
    """
    try:
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)

        if metadata:
            with open(filepath, "w", encoding="utf-8") as f:
                _write_metadata_header(f, metadata)
            df.to_csv(filepath, mode="a", index=False, float_format=float_format, **kwargs)
        else:
            df.to_csv(filepath, index=False, float_format=float_format, **kwargs)

        logger.info(f"Exported {len(df)} rows to {filepath}")

    except OSError as e:
        logger.error(f"Failed to export CSV: {str(e)}")
        raise Trans2UnetError(f"Failed to export CSV: {str(e)}") from e


def append_csv_row(filepath: Path, row: dict[str, Any], float_format: str = FLOAT_FORMAT) -> None:
    """Append one row, writing the header first when the file is new.

    The file is flushed on every call so partial runs leave a valid log.
    """
    try:
        filepath = Path(filepath)
        new_file = not filepath.exists()
        pd.DataFrame([row]).to_csv(
            filepath, mode="a", header=new_file, index=False, float_format=float_format
        )
        logger.debug(f"Appended row to {filepath}")
    except OSError as e:
        logger.error(f"Failed to append to {filepath}: {str(e)}")
        raise Trans2UnetError(f"Failed to append to {filepath}: {str(e)}") from e


def _write_metadata_header(file_handle: TextIO, metadata: dict[str, Any]) -> None:
    for key, value in metadata.items():
        if value is not None:
            file_handle.write(f"# {key}: {value}\n")


def read_csv_with_metadata(filepath: Path, **kwargs: Any) -> tuple[pd.DataFrame, dict[str, str]]:
    """Read a CSV written by ``export_to_csv`` and its metadata comments.

    Returns:
        Tuple of (DataFrame, metadata_dict)
    """
    try:
        filepath = Path(filepath)
        metadata = {}
        with open(filepath, encoding="utf-8") as f:
            for line in f:
                if not line.startswith("#"):
                    break
                text = line.lstrip("#").strip()
                if ":" in text:
                    key, value = text.split(":", 1)
                    metadata[key.strip()] = value.strip()

        df = pd.read_csv(filepath, comment="#", **kwargs)
        logger.debug(f"Read {len(df)} rows from {filepath}")
        return df, metadata

    except OSError as e:
        logger.error(f"Failed to read CSV: {str(e)}")
        raise Trans2UnetError(f"Failed to read CSV: {str(e)}") from e
