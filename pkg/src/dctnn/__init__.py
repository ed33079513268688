"""Dual-channel tensor neural networks with conformal ROC bands and structure selection."""
from .conformal import AucInterval, ConformalROC, LatentSet, RocBand, auc_intervals
from .decomp import CPDecomposition, RankDeficientError, TuckerDecomposition
from .network import DCTNNClassifier, DCTNNRegressor, DualChannelNet, TrainConfig, train
from .selector import CONFLICT, MODEL_A, MODEL_B, TIE, select_structure
from .simgen import SimConfig, SimDataset, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "AucInterval", "ConformalROC", "LatentSet", "RocBand", "auc_intervals",
    "CPDecomposition", "RankDeficientError", "TuckerDecomposition",
    "DCTNNClassifier", "DCTNNRegressor", "DualChannelNet", "TrainConfig", "train",
    "CONFLICT", "MODEL_A", "MODEL_B", "TIE", "select_structure",
    "SimConfig", "SimDataset", "gen_dataset",
]
