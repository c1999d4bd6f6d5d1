"""Geospatially-aware dual-branch land-cover classifier in numpy."""

from .config import TrainConfig
from .data import ClassScheme, Dataset, RegionScheme, SynthSpec, generate_synthetic, load_dataset
from .experiment import evaluate, run_ablation, run_loro, train
from .model import BridgeModel, build_model, load_model, save_model

__all__ = [
    "TrainConfig", "ClassScheme", "Dataset", "RegionScheme", "SynthSpec", "generate_synthetic",
    "load_dataset", "evaluate", "run_ablation", "run_loro", "train", "BridgeModel", "build_model",
    "load_model", "save_model",
]
__version__ = "0.1.0"
