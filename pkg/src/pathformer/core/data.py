"""
Location: src/pathformer/core/data.py

Description: Dataset Handling for Pathformer.

Reads benchmark-style CSV files (timestamp column first, one column per
channel), splits them chronologically into train/val/test, standardises with
train-split statistics and cuts stride-1 sliding windows. Also generates the
synthetic sinusoid datasets used for convergence and transfer checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from pathformer.utils.errors import ConfigError, DataError

SPLITS: Tuple[str, ...] = ("train", "val", "test")
ETT_SPLIT: Tuple[float, float, float] = (0.6, 0.2, 0.2)
DEFAULT_SPLIT: Tuple[float, float, float] = (0.7, 0.1, 0.2)


def default_split(name: str) -> Tuple[float, float, float]:
    """6:2:2 for the ETT family, 7:1:2 for everything else."""
    return ETT_SPLIT if Path(name).stem.lower().startswith("ett") else DEFAULT_SPLIT


@dataclass(frozen=True)
class TimeSeriesWindow:
    """One (input, target) pair: inputs (H, C) and target (F, C), from row `start` of its split."""

    inputs: np.ndarray
    target: np.ndarray
    start: int
    channels: Tuple[str, ...]


@dataclass
class Dataset:
    """
    A multichannel series and its chronological split.

    Attributes:
        values (np.ndarray): Raw observations, shape (T, C).
        channels (Tuple[str, ...]): Channel names.
        split (Tuple[float, float, float]): Train/val/test ratios.
        name (str): Dataset name (file stem for CSV input).
        timestamps (Optional[np.ndarray]): First-column strings, kept for output only.
    """

    values: np.ndarray
    channels: Tuple[str, ...]
    split: Tuple[float, float, float] = DEFAULT_SPLIT
    name: str = "dataset"
    timestamps: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] == 0 or self.values.shape[1] == 0:
            raise DataError(
                f"dataset values must be a non-empty (T, C) matrix, got {self.values.shape}"
            )
        if len(self.channels) != self.values.shape[1]:
            raise DataError(
                f"{len(self.channels)} channel names for {self.values.shape[1]} columns"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset values must be finite")
        ratios = self.split
        if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(
                f"split must be three positive ratios summing to 1, got {list(self.split)}"
            )

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.values.shape[1])

    def bounds(self) -> Dict[str, Tuple[int, int]]:
        """Half-open row ranges of the three splits; contiguous and non-overlapping."""
        total = self.length
        num_train = int(total * self.split[0])
        num_test = int(total * self.split[2])
        num_val = total - num_train - num_test
        return {
            "train": (0, num_train),
            "val": (num_train, num_train + num_val),
            "test": (num_train + num_val, total),
        }

    def split_values(self, split: str, standardized: bool = True) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; choose from {list(SPLITS)}")
        start, end = self.bounds()[split]
        values = self.values[start:end]
        return self.standardize(values) if standardized else values.copy()

    @cached_property
    def stats(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and std of the train split; zero std is replaced by 1."""
        start, end = self.bounds()["train"]
        train = self.values[start:end]
        if train.shape[0] == 0:
            raise DataError(f"{self.name}: train split is empty")
        std = train.std(axis=0)
        return train.mean(axis=0), np.where(std > 0, std, 1.0)

    def standardize(self, values: np.ndarray) -> np.ndarray:
        mean, std = self.stats
        return (np.asarray(values, dtype=np.float64) - mean) / std

    def destandardize(self, values: np.ndarray) -> np.ndarray:
        mean, std = self.stats
        return np.asarray(values, dtype=np.float64) * std + mean


# -- CSV I/O ---------------------------------------------------------------------------


def load_csv(
    path: Path,
    split: Optional[Sequence[float]] = None,
    name: Optional[str] = None,
) -> Dataset:
    """
    Reads a CSV with a header row, a timestamp first column and numeric channels.

    Raises:
        FileNotFoundError: If the file does not exist.
        DataError: On missing or non-numeric values (naming the file line) or too few columns.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: cannot parse CSV: {exc}") from exc
    if frame.shape[1] < 2:
        raise DataError(f"{path}: expected a timestamp column plus at least one channel")
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no data rows")

    channels = frame.columns[1:]
    raw = frame[channels]
    # header is line 1
    missing = raw.isna().any(axis=1).to_numpy()
    if missing.any():
        row = int(np.flatnonzero(missing)[0])
        column = raw.columns[raw.iloc[row].isna().to_numpy()][0]
        raise DataError(f"{path}: missing value in column {column!r} at line {row + 2}")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        column = numeric.columns[numeric.iloc[row].isna().to_numpy()][0]
        raise DataError(
            f"{path}: non-numeric value {raw.iloc[row][column]!r} in column {column!r}"
            f" at line {row + 2}"
        )

    name = name or path.stem
    ratios = tuple(split) if split is not None else default_split(name)
    return Dataset(
        values=numeric.to_numpy(dtype=np.float64),
        channels=tuple(str(c) for c in channels),
        split=ratios,
        name=name,
        timestamps=frame.iloc[:, 0].to_numpy(),
    )


def save_csv(dataset: Dataset, path: Path) -> Path:
    """Writes a dataset in the same layout `load_csv` reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamps = dataset.timestamps
    if stamps is None:
        hours = pd.date_range("2020-01-01", periods=dataset.length, freq="h")
        stamps = hours.strftime("%Y-%m-%d %H:%M:%S")
    frame = pd.DataFrame(dataset.values, columns=list(dataset.channels))
    frame.insert(0, "date", np.asarray(stamps))
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


# -- synthetic data --------------------------------------------------------------------


def synthetic_series(
    length: int = 2000,
    channels: int = 1,
    seed: int = 2024,
    variant: str = "a",
    noise: float = 0.05,
) -> Dataset:
    """
    Two sinusoids, a linear trend and Gaussian noise per channel.

    Variant "a": sin(2*pi*t/12) + 0.5*sin(2*pi*t/48) + 0.001*t.
    Variant "b": sin(2*pi*t/8) + 0.7*sin(2*pi*t/36) - 0.0005*t.
    Every channel gets its own phase offset.
    """
    if length < 2 or channels < 1:
        raise ConfigError(
            f"synthetic series needs length >= 2 and channels >= 1, got {length}, {channels}"
        )
    shapes = {
        "a": (12.0, 48.0, 0.5, 0.001),
        "b": (8.0, 36.0, 0.7, -0.0005),
    }
    if variant not in shapes:
        raise ConfigError(f"unknown synthetic variant {variant!r}; choose from {sorted(shapes)}")
    fast, slow, amplitude, slope = shapes[variant]
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(1, channels))
    values = (
        np.sin(2.0 * np.pi * t / fast + phase)
        + amplitude * np.sin(2.0 * np.pi * t / slow + phase)
        + slope * t
        + rng.normal(0.0, noise, size=(length, channels))
    )
    stamps = pd.date_range("2020-01-01", periods=length, freq="h").strftime("%Y-%m-%d %H:%M:%S")
    return Dataset(
        values=values,
        channels=tuple(f"ch{i}" for i in range(channels)),
        split=DEFAULT_SPLIT,
        name=f"synthetic_{variant}",
        timestamps=np.asarray(stamps),
    )


# -- windows ---------------------------------------------------------------------------


def window_arrays(
    dataset: Dataset,
    input_len: int,
    pred_len: int,
    split: str,
    standardized: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    All stride-1 windows of a split as arrays.

    Returns:
        (inputs (N, H, C), targets (N, F, C)) with N = split_len - H - F + 1.

    Raises:
        DataError: If the split holds fewer than H + F rows.
    """
    if input_len < 1 or pred_len < 1:
        raise ConfigError(f"window lengths must be >= 1, got H={input_len}, F={pred_len}")
    values = dataset.split_values(split, standardized=standardized)
    span = input_len + pred_len
    if values.shape[0] < span:
        raise DataError(
            f"{dataset.name}: {split} split has {values.shape[0]} rows, "
            f"needs at least H + F = {span}"
        )
    # (N, C, span) -> (N, span, C)
    windows = np.swapaxes(sliding_window_view(values, span, axis=0), 1, 2)
    return windows[:, :input_len].copy(), windows[:, input_len:].copy()


def make_windows(
    dataset: Dataset,
    input_len: int,
    pred_len: int,
    split: str,
    standardized: bool = True,
) -> Iterator[TimeSeriesWindow]:
    """Streams the windows of `window_arrays` one at a time."""
    inputs, targets = window_arrays(dataset, input_len, pred_len, split, standardized)
    for start, (x, y) in enumerate(zip(inputs, targets)):
        yield TimeSeriesWindow(inputs=x, target=y, start=start, channels=dataset.channels)
