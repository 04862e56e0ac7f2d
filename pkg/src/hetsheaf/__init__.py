"""Heterogeneous sheaf neural networks on a small numpy autodiff engine."""

from .errors import DimensionError, HetSheafError, NumericError, ValidationError
from .graph import FeatureStore, HeteroGraph, LabelStore, canonicalize
from .laplacian import SheafLaplacian, assemble, normalize
from .maps import RestrictionMapSet, build_maps, param_count
from .model import GraphSchema, HetSheafModel, ModelConfig
from .predictors import SheafPredictor, param_budget
from .train import RunConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "FeatureStore", "GraphSchema", "HetSheafError", "HetSheafModel", "HeteroGraph",
    "LabelStore", "ModelConfig", "NumericError", "RestrictionMapSet", "RunConfig", "SheafLaplacian",
    "SheafPredictor", "ValidationError", "assemble", "build_maps", "canonicalize", "evaluate", "normalize",
    "param_budget", "param_count", "train",
]
