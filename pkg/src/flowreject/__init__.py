"""Density-based false-positive rejection with normalizing flows.

Learns the distribution of true-positive feature vectors with a stack of
affine coupling layers and rejects detections whose log-likelihood falls
below a threshold.  Ships classical baselines (KDE, PCA reconstruction,
shrinkage Gaussian), a stratified cross-validation harness with three
experiment protocols, a seeded synthetic data generator, and a CLI.
"""

from .baselines import GaussianScorer, KDEScorer, PCAScorer, make_baseline
from .detector import FlowDetector
from .encoder import EncoderModel
from .flow import CouplingLayer, FlowModel
from .training import AdamW, TrainConfig, TrainData, train

__version__ = "0.1.0"

__all__ = [
    "AdamW", "CouplingLayer", "EncoderModel", "FlowDetector", "FlowModel",
    "GaussianScorer", "KDEScorer", "PCAScorer", "TrainConfig", "TrainData",
    "make_baseline", "train", "__version__",
]
