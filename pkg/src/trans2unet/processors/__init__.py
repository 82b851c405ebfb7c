"""File formats: configuration text, CSV tables and JSON reports."""

from trans2unet.processors.config_file import (
    flatten_config,
    format_flat,
    format_value,
    parse_flat,
    parse_override,
    unflatten_config,
)
from trans2unet.processors.csv import append_csv_row, export_to_csv, read_csv_with_metadata
from trans2unet.processors.json import export_to_json, format_json

__all__ = [
    "append_csv_row",
    "export_to_csv",
    "export_to_json",
    "flatten_config",
    "format_flat",
    "format_json",
    "format_value",
    "parse_flat",
    "parse_override",
    "read_csv_with_metadata",
    "unflatten_config",
]
