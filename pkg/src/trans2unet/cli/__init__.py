"""Command-line interface for trans2unet."""

from trans2unet.cli.main import cli

__all__ = ["cli"]
