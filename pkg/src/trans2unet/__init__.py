"""trans2unet - two-branch Unet + TransUnet segmentation on a numpy autodiff engine."""

from trans2unet.__version__ import __version__
from trans2unet.experiment import Experiment

__all__ = ["__version__", "Experiment"]
