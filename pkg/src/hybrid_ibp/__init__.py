"""Parallel hybrid collapsed/uncollapsed MCMC for Indian Buffet Process models."""

from .model import FeatureMatrix, HyperParams
from .engine import EngineConfig, HybridEngine, run_hybrid
from .data import Dataset, generate_cambridge

__all__ = ["FeatureMatrix", "HyperParams", "EngineConfig", "HybridEngine", "run_hybrid",
           "Dataset", "generate_cambridge"]
__version__ = "0.1.0"
