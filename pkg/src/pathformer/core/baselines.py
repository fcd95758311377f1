"""
Location: src/pathformer/core/baselines.py

Description: Reference forecasters the network is measured against.

1. **Seasonal naive**: repeats the last observed season.
2. **Linear**: a per-channel least-squares map from the H inputs to the F
   outputs, with a small ridge term, fitted on the train windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from pathformer.core.data import Dataset, window_arrays
from pathformer.core.training import Metrics, compute_metrics
from pathformer.utils.errors import ConfigError, DimensionError


def seasonal_naive(inputs: np.ndarray, pred_len: int, season: int) -> np.ndarray:
    """
    Forecasts step h as the input value one season before, repeating the last
    season when F exceeds it.

    Args:
        inputs: Windows (N, H, C) or a single window (H, C).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    length = inputs.shape[-2]
    if not 1 <= season <= length:
        raise ConfigError(f"season must lie in [1, H={length}], got {season}")
    index = length - season + (np.arange(pred_len) % season)
    return np.take(inputs, index, axis=-2)


@dataclass
class LinearBaseline:
    """
    One ridge-regularised (H + 1) -> F map per channel.

    Attributes:
        weights (np.ndarray): Shape (C, H + 1, F); the last input row is the intercept.
    """

    weights: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray, targets: np.ndarray, ridge: float = 1e-3) -> LinearBaseline:
        """Solves the normal equations per channel on windows (N, H, C) -> (N, F, C)."""
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.shape[0] != targets.shape[0] or inputs.shape[2] != targets.shape[2]:
            raise DimensionError(f"cannot fit inputs {inputs.shape} to targets {targets.shape}")
        count, length, channels = inputs.shape
        design = np.concatenate([inputs, np.ones((count, 1, channels))], axis=1)
        weights = []
        for c in range(channels):
            a = design[:, :, c]
            gram = a.T @ a + ridge * np.eye(length + 1)
            weights.append(np.linalg.solve(gram, a.T @ targets[:, :, c]))
        return cls(np.stack(weights))

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        channels, rows, _ = self.weights.shape
        if inputs.shape[-2:] != (rows - 1, channels):
            raise DimensionError(
                f"linear baseline expects windows ({rows - 1}, {channels}), got {inputs.shape}"
            )
        design = np.concatenate([inputs, np.ones(inputs.shape[:-2] + (1, channels))], axis=-2)
        return np.einsum("...hc,chf->...fc", design, self.weights)


def baseline_metrics(
    dataset: Dataset, input_len: int, pred_len: int, season: int
) -> Dict[str, Metrics]:
    """Test-split metrics of both baselines on the standardised scale."""
    x_train, y_train = window_arrays(dataset, input_len, pred_len, "train")
    x_test, y_test = window_arrays(dataset, input_len, pred_len, "test")
    linear = LinearBaseline.fit(x_train, y_train)
    return {
        "seasonal_naive": compute_metrics(
            seasonal_naive(x_test, pred_len, min(season, input_len)), y_test
        ),
        "linear": compute_metrics(linear.predict(x_test), y_test),
    }
