"""Multiscale mixing forecaster on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentSpec, load_spec
from .data import (SeriesDataset, WindowSpec, load_csv, split_and_scale, synth_multiscale,
                   window_arrays)
from .decomposition import DecompositionConfig, series_decomp
from .metrics import MetricsConfig, MetricsReport, evaluate_windows, forecastability
from .model import ABLATION_CASES, AblationConfig, ModelConfig, TimeMixerModel, init_parameters
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, evaluate, train

__all__ = [
    "ABLATION_CASES", "AblationConfig", "DecompositionConfig", "ExperimentSpec", "MetricsConfig",
    "MetricsReport", "ModelConfig", "SeriesDataset", "Tensor", "TimeMixerModel", "TrainConfig",
    "WindowSpec", "backward", "evaluate", "evaluate_windows", "forecastability", "init_parameters",
    "load_checkpoint", "load_csv", "load_spec", "no_grad", "save_checkpoint", "series_decomp",
    "split_and_scale", "synth_multiscale", "train", "window_arrays",
]
