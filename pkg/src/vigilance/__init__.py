"""Vigilance-state classification from single-channel EEG epochs.

Spectral and time-domain feature extraction, a from-scratch gradient-boosted
tree classifier with TreeSHAP explanations, linear and MLP baselines, and
evaluation tooling.
"""

from ._kernels import BACKEND
from .dataio import Dataset, Epoch, Recording, VigilanceState, synth_dataset
from .errors import VigilanceError
from .features import FeatureSchema, extract_matrix
from .gbt import GbtConfig, GbtModel, load_model, predict_proba, train_gbt

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "Epoch",
    "FeatureSchema",
    "GbtConfig",
    "GbtModel",
    "Recording",
    "VigilanceError",
    "VigilanceState",
    "extract_matrix",
    "load_model",
    "predict_proba",
    "synth_dataset",
    "train_gbt",
]
