"""Lightweight patch-wise steganalysis: Saab features, boosted trees, spot fusion."""

from .imaging import GrayImage, read_pgm, write_pgm
from .model import GsModel, RunConfig, load_model, save_model
from .pipeline import detect, fit

__version__ = "0.1.0"

__all__ = ["GrayImage", "read_pgm", "write_pgm", "GsModel", "RunConfig", "load_model", "save_model",
           "detect", "fit"]
