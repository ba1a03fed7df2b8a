"""Gradient-free saliency for CNNs via Shapley values over feature-map positions."""

__version__ = "0.1.0"

from .errors import ImageError, ModelLoadError, OracleError, ShapcamError, ShapeError
from .evalharness import build_report, evaluate_image, read_annotations
from .model import load_model
from .shapley import SaliencyMap, exact_shapley, sample_shapley, shap_cam
from .tensor import Tensor
from .worth import ExternalOracle, Game, InProcessOracle, make_game

__all__ = [
    "Tensor",
    "Game",
    "make_game",
    "InProcessOracle",
    "ExternalOracle",
    "SaliencyMap",
    "shap_cam",
    "exact_shapley",
    "sample_shapley",
    "load_model",
    "evaluate_image",
    "build_report",
    "read_annotations",
    "ShapcamError",
    "ShapeError",
    "ModelLoadError",
    "OracleError",
    "ImageError",
    "__version__",
]
