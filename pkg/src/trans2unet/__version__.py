"""Version information for trans2unet package."""

__version__ = "0.1.0"
