"""Changepoint detection with pyramid recurrent networks.

A float64 reverse-mode autodiff core, a trainable wavelet filter bank, CNN
pyramid streams, a top-down pyramid recurrent layer, CNN/RCN/DWN baselines,
a synthetic multi-scale change generator, training, and tolerance-matched
PR-AUC evaluation.
"""
from ._accel import backend
from .data import ChangeEvent, DatasetSpec, LabeledSeries, gen_dataset, gen_series, load_csv
from .errors import ConfigError, DataError, NumericError, PyrcpdError
from .evaluate import EvalConfig, auc, match, nms
from .models import ModelConfig, build_model, load_model, save_model
from .tensor import Tensor, backward
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ChangeEvent", "ConfigError", "DataError", "DatasetSpec", "EvalConfig", "LabeledSeries",
    "ModelConfig", "NumericError", "PyrcpdError", "Tensor", "TrainConfig", "auc", "backend",
    "backward", "build_model", "gen_dataset", "gen_series", "load_csv", "load_model", "match",
    "nms", "save_model", "train",
]
