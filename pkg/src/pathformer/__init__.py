"""
Location: src/pathformer/__init__.py

Description: Pathformer - Routed Multi-Scale Time-Series Forecasting.

This package provides a self-contained time-series forecasting engine that
views a series at several temporal resolutions and lets a router pick the
scales worth computing for each input.

Core Features:

1. **Pathformer**: Instance Norm, stacked AMS blocks and a linear Predictor.
2. **train / evaluate / transfer**: Adam with early stopping, MSE/MAE metrics,
   zero-shot, part-tuning and full-tuning.
3. **Tensor**: The float64 reverse-mode engine everything is written against.

Runtime settings are read from `pyproject.toml`, experiments from JSON configs.
"""

from .core.config import ExperimentConfig, ModelConfig, TrainConfig
from .core.data import Dataset, load_csv, synthetic_series
from .core.model import Forecast, Pathformer
from .core.numerics import Tensor
from .core.training import Metrics, evaluate, train, transfer

__version__ = "1.0.0"


def get_info() -> str:
    """
    Returns the basic identity string for the package.

    Returns:
        str: A formatted string containing the tool name, version, and purpose.
    """
    return f"Pathformer v{__version__} - Multi-Scale Time-Series Forecasting Engine"


__all__ = [
    "Dataset",
    "ExperimentConfig",
    "Forecast",
    "Metrics",
    "ModelConfig",
    "Pathformer",
    "Tensor",
    "TrainConfig",
    "evaluate",
    "get_info",
    "load_csv",
    "synthetic_series",
    "train",
    "transfer",
    "__version__",
]
