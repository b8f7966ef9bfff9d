"""Bayesian nonparametric mixture models for developmental toxicity data."""

from .model import Dataset, DamRecord, Hyperparameters, ModelSpec, MODEL_NAMES

__version__ = "0.1.0"

__all__ = ["Dataset", "DamRecord", "Hyperparameters", "ModelSpec", "MODEL_NAMES", "__version__"]
