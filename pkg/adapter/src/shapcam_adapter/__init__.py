"""Bridges the saliency engine's JSON-lines oracle protocol to torch models."""

from .models import resolve_model, tiny16
from .splitmodel import SplitRunner

__all__ = ["SplitRunner", "resolve_model", "tiny16"]
__version__ = "0.1.0"
