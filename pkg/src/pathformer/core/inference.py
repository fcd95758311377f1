"""
Location: src/pathformer/core/inference.py

Description: Read-only uses of a trained model.

1. **inspect_pathways**: average routing weights per block and patch size over a split.
2. **forecast_window**: predicts the next F steps after the last H rows of a raw series,
   and returns plot-ready frames of the forecast and the input tail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pathformer.core.data import Dataset, window_arrays
from pathformer.core.model import Pathformer
from pathformer.core.numerics import no_grad
from pathformer.utils.errors import DataError


@dataclass(frozen=True)
class PathwayReport:
    """
    Routing statistics of a split.

    Attributes:
        patch_sizes (Tuple[Tuple[int, ...], ...]): Scales of every block.
        mean_weight (np.ndarray): Average dense weight, shape (blocks, M).
        selection_rate (np.ndarray): Fraction of rows selecting each scale, shape (blocks, M).
        samples (int): Routed rows (windows x channels).
    """

    patch_sizes: Tuple[Tuple[int, ...], ...]
    mean_weight: np.ndarray
    selection_rate: np.ndarray
    samples: int

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "block": block,
                "patch_size": size,
                "mean_weight": float(self.mean_weight[block, i]),
                "selection_rate": float(self.selection_rate[block, i]),
            }
            for block, sizes in enumerate(self.patch_sizes)
            for i, size in enumerate(sizes)
        ]
        return pd.DataFrame(rows, columns=["block", "patch_size", "mean_weight", "selection_rate"])


def inspect_pathways(
    model: Pathformer,
    dataset: Dataset,
    split: str = "test",
    batch_size: int = 256,
) -> PathwayReport:
    """
    Averages the router output of every block over all windows of a split.

    Raises:
        DataError: If the split holds no window.
    """
    cfg = model.config
    inputs, _ = window_arrays(dataset, cfg.input_len, cfg.pred_len, split)
    sizes = tuple(block.patch_sizes for block in model.blocks)
    weight_sum = np.zeros((len(sizes), cfg.scales_per_block))
    chosen = np.zeros_like(weight_sum)
    rows = 0
    with no_grad():
        for start in range(0, inputs.shape[0], batch_size):
            forecast = model.forward(inputs[start:start + batch_size])
            for index, trace in enumerate(forecast.block_traces):
                weight_sum[index] += trace.pathways.dense.sum(axis=0)
                chosen[index] += trace.pathways.mask.sum(axis=0)
            rows += forecast.block_traces[0].pathways.mask.shape[0]
    if rows == 0:
        raise DataError(f"{split} split produced no routed rows")
    return PathwayReport(patch_sizes=sizes, mean_weight=weight_sum / rows,
                         selection_rate=chosen / rows, samples=rows)


def forecast_window(
    model: Pathformer,
    values: np.ndarray,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Forecasts from the last H rows of a raw (T, C) series.

    With `stats`, the window is standardised by them first and the forecast
    mapped back to the raw scale.

    Returns:
        (forecast (F, C), input tail (H, C)), both on the raw scale.

    Raises:
        DataError: If fewer than H rows are supplied.
    """
    cfg = model.config
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < cfg.input_len:
        raise DataError(
            f"forecast needs at least H={cfg.input_len} rows,"
            f" got {values.shape[0] if values.ndim else 0}"
        )
    tail = values[-cfg.input_len:]
    window = tail if stats is None else (tail - stats[0]) / stats[1]
    with no_grad():
        prediction = model.forward(window).values
    if stats is not None:
        prediction = prediction * stats[1] + stats[0]
    return prediction, tail


def forecast_frames(
    model: Pathformer,
    dataset: Dataset,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Forecast and input tail of a loaded CSV as frames with one column per channel."""
    prediction, tail = forecast_window(model, dataset.values, stats)
    channels: List[str] = list(dataset.channels)
    forecast = pd.DataFrame(prediction, columns=channels)
    forecast.insert(0, "step", np.arange(1, prediction.shape[0] + 1))
    history = pd.DataFrame(tail, columns=channels)
    stamps: Sequence = (
        dataset.timestamps[-tail.shape[0]:] if dataset.timestamps is not None
        else np.arange(-tail.shape[0] + 1, 1)
    )
    history.insert(0, "date", np.asarray(stamps))
    return forecast, history
