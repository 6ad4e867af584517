"""Desk-scale in-context sound event detector trained on generated scenes."""

from .config import ToyModelConfig
from .model import InContextDetector, build_model, count_parameters

__all__ = ["ToyModelConfig", "InContextDetector", "build_model",
           "count_parameters"]

__version__ = "0.1.0"
