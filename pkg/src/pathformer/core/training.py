"""
Location: src/pathformer/core/training.py

Description: Optimisation, Evaluation and Transfer for Pathformer.

1. **train**: Adam on mini-batches of windows, validation after every epoch,
   early stopping with restoration of the best parameters.
2. **evaluate**: MSE/MAE over every window, horizon step and channel of a split,
   batches spread over a thread pool capped by PATHFORMER_THREADS.
3. **transfer**: zero-shot, part-tuning (router, decomposition and predictor
   only) and full-tuning of a pretrained model on a new dataset.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console

from pathformer.core.config import ModelConfig, TrainConfig, resolve_thread_count
from pathformer.core.data import Dataset, window_arrays
from pathformer.core.model import Pathformer
from pathformer.core.numerics import Tensor, abs_, gradients, mean, no_grad
from pathformer.core.optim import Adam
from pathformer.utils.errors import ConfigError, ContractError, DataError, TrainingError

console = Console()

PART_TUNING_MARKERS = (".router.", ".decomposition.")


@dataclass(frozen=True)
class Metrics:
    """Errors averaged over windows, horizon steps and channels."""

    mse: float
    mae: float
    windows: int
    wall_clock_s: float = 0.0
    per_horizon_mse: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> Dict[str, float]:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "windows": self.windows,
            "wall_clock_s": self.wall_clock_s,
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    improved: bool
    wall_clock_s: float


@dataclass
class TrainHistory:
    """Per-epoch losses and the early-stopping outcome."""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    steps: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(r) for r in self.records],
            columns=["epoch", "train_loss", "val_loss", "improved", "wall_clock_s"],
        )


@dataclass(frozen=True)
class TransferResult:
    """Outcome of one transfer mode."""

    mode: str
    metrics: Metrics
    trainable_parameters: int
    total_parameters: int
    wall_clock_s: float
    model: Pathformer = field(repr=False, compare=False)
    history: Optional[TrainHistory] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "mode": self.mode,
            **self.metrics.to_dict(),
            "trainable_parameters": self.trainable_parameters,
            "total_parameters": self.total_parameters,
            "transfer_wall_clock_s": self.wall_clock_s,
        }


# -- losses and metrics ----------------------------------------------------------------


def loss_fn(prediction: Tensor, target: np.ndarray, kind: str = "l1") -> Tensor:
    """Mean absolute (l1) or mean squared (l2) error as a differentiable scalar."""
    diff = prediction - target
    if kind == "l1":
        return mean(abs_(diff))
    if kind == "l2":
        return mean(diff * diff)
    raise ConfigError(f"unknown loss {kind!r}; choose 'l1' or 'l2'")


def compute_metrics(
    prediction: np.ndarray, target: np.ndarray, wall_clock_s: float = 0.0
) -> Metrics:
    """MSE and MAE of predictions [N, F, C] (or [F, C]) against targets of the same shape."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ContractError(f"prediction {prediction.shape} and target {target.shape} differ")
    if prediction.size == 0:
        raise DataError("cannot compute metrics over zero windows")
    err = prediction - target
    windows = prediction.shape[0] if prediction.ndim == 3 else 1
    per_horizon = np.mean(err * err, axis=tuple(a for a in range(err.ndim) if a != err.ndim - 2))
    return Metrics(
        mse=float(np.mean(err * err)),
        mae=float(np.mean(np.abs(err))),
        windows=int(windows),
        wall_clock_s=float(wall_clock_s),
        per_horizon_mse=per_horizon,
    )


# -- inference ---------------------------------------------------------------------------


def predict_array(
    model: Pathformer,
    inputs: np.ndarray,
    batch_size: int = 256,
    threads: Optional[int] = None,
) -> np.ndarray:
    """
    Forecasts a stack of windows (N, H, C) without recording gradients.

    Batches may run on several threads; results are reassembled in batch order.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise DataError("no windows to predict")
    threads = resolve_thread_count() if threads is None else threads
    chunks = [inputs[i:i + batch_size] for i in range(0, inputs.shape[0], batch_size)]

    def run(chunk: np.ndarray) -> np.ndarray:
        with no_grad():
            return model.forward(chunk).values

    if threads <= 1 or len(chunks) == 1:
        return np.concatenate([run(c) for c in chunks], axis=0)
    with ThreadPoolExecutor(max_workers=min(threads, len(chunks))) as pool:
        return np.concatenate(list(pool.map(run, chunks)), axis=0)


def evaluate(
    model: Pathformer,
    dataset: Dataset,
    split: str = "test",
    config: Optional[TrainConfig] = None,
    threads: Optional[int] = None,
) -> Metrics:
    """
    Metrics of `model` over every window of a split.

    Errors are measured on the train-standardised scale unless
    `config.raw_scale_metrics` is set.

    Raises:
        DataError: If the split is too short to hold a single window.
    """
    config = config or TrainConfig()
    cfg = model.config
    started = time.perf_counter()
    inputs, targets = window_arrays(dataset, cfg.input_len, cfg.pred_len, split)
    predictions = predict_array(model, inputs, config.eval_batch_size, threads)
    if config.raw_scale_metrics:
        predictions = dataset.destandardize(predictions)
        targets = dataset.destandardize(targets)
    return compute_metrics(predictions, targets, time.perf_counter() - started)


# -- training ----------------------------------------------------------------------------


def trainable_names(model: Pathformer, mode: str = "none") -> List[str]:
    """
    Parameters a transfer mode updates.

    Part-tuning keeps the router, the decomposition maps and the predictor
    trainable and freezes all attention parameters.
    """
    names = list(model.parameters())
    if mode in ("none", "full_tuning"):
        return names
    if mode == "zero_shot":
        return []
    if mode == "part_tuning":
        return [
            n for n in names
            if n.startswith("predictor.")
            or any(marker in f".{n}" for marker in PART_TUNING_MARKERS)
        ]
    raise ConfigError(f"unknown transfer mode {mode!r}")


def _validation_loss(
    model: Pathformer, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig
) -> float:
    predictions = predict_array(model, inputs, config.eval_batch_size)
    err = predictions - targets
    return float(np.mean(np.abs(err)) if config.loss == "l1" else np.mean(err * err))


def train(
    model: Pathformer,
    dataset: Dataset,
    config: TrainConfig,
    trainable: Optional[Sequence[str]] = None,
    verbose: bool = False,
) -> TrainHistory:
    """
    Fits `model` in place and restores the parameters of the best validation epoch.

    Args:
        model: Network to optimise.
        dataset: Provides the train and val splits.
        config: Optimiser, loss, batching and early-stopping settings.
        trainable: Parameter names to update; all when None.
        verbose: Print one line per epoch.

    Raises:
        TrainingError: If a loss becomes NaN or infinite, naming epoch and step.
        DataError: If a split cannot hold a window.
    """
    cfg = model.config
    rng = np.random.default_rng(config.seed)
    x_train, y_train = window_arrays(dataset, cfg.input_len, cfg.pred_len, "train")
    x_val, y_val = window_arrays(dataset, cfg.input_len, cfg.pred_len, "val")

    params = model.parameters()
    names = list(params) if trainable is None else list(trainable)
    optimizer = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                     eps=config.eps, trainable=names)
    watched = {n: params[n] for n in names}

    history = TrainHistory()
    best_state = model.state()
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(x_train.shape[0]) if config.shuffle else np.arange(x_train.shape[0])
        batches = [order[i:i + config.batch_size] for i in range(0, order.size, config.batch_size)]
        if config.max_batches_per_epoch is not None:
            batches = batches[:config.max_batches_per_epoch]

        losses = []
        for idx in batches:
            history.steps += 1
            forecast = model.forward(x_train[idx], train_mode=True, rng=rng)
            loss = loss_fn(forecast.prediction, y_train[idx], config.loss)
            if forecast.balance_loss is not None:
                loss = loss + forecast.balance_loss
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, step {history.steps}"
                )
            losses.append(value)
            if names:
                optimizer.step(gradients(loss, watched))

        val_loss = _validation_loss(model, x_val, y_val, config)
        if not np.isfinite(val_loss):
            raise TrainingError(
                f"non-finite validation loss at epoch {epoch}, step {history.steps}"
            )
        improved = val_loss < history.best_val_loss
        if improved:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.state()
            wait = 0
        else:
            wait += 1

        elapsed = time.perf_counter() - started
        record = EpochRecord(epoch, float(np.mean(losses)), val_loss, improved, elapsed)
        history.records.append(record)
        if verbose:
            marker = "[bold green]✓[/]" if improved else f"[dim]{wait}/{config.patience}[/]"
            console.print(
                f"[bold blue]Epoch {epoch}:[/] train {record.train_loss:.4f}  "
                f"val {val_loss:.4f}  {marker}  [dim]{record.wall_clock_s:.1f}s[/]"
            )
        if wait >= config.patience:
            history.stopped_early = True
            break

    model.load_state(best_state)
    return history


# -- transfer ----------------------------------------------------------------------------


def transfer(
    pretrained: Pathformer,
    target: Dataset,
    mode: str,
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    verbose: bool = False,
) -> TransferResult:
    """
    Applies a pretrained model to a new dataset.

    Args:
        pretrained: Source model; never modified.
        target: Dataset to transfer to; its channel count may differ.
        mode: zero_shot, part_tuning or full_tuning.
        config: Training settings for the tuning modes.
        model_config: Architecture the target run expects. When given, the
            pretrained weights must fit it exactly.

    Raises:
        ContractError: Listing mismatched parameter keys when the weights do not fit.
    """
    if mode not in ("zero_shot", "part_tuning", "full_tuning"):
        raise ConfigError(
            f"transfer mode must be zero_shot, part_tuning or full_tuning, got {mode!r}"
        )
    started = time.perf_counter()
    if model_config is not None:
        target_config = dataclasses.replace(model_config, channels=target.num_channels)
        model = Pathformer(target_config, pretrained.seed)
        model.load_state(pretrained.state(), skip_prefixes=("norm.",))
    elif target.num_channels != pretrained.config.channels:
        model = pretrained.rebuild_for_channels(target.num_channels)
    else:
        model = pretrained.copy()

    names = trainable_names(model, mode)
    history = None
    if mode != "zero_shot":
        history = train(model, target, config, trainable=names, verbose=verbose)
    metrics = evaluate(model, target, "test", config)
    return TransferResult(
        mode=mode,
        metrics=metrics,
        trainable_parameters=model.parameter_count(names),
        total_parameters=model.parameter_count(),
        wall_clock_s=time.perf_counter() - started,
        model=model,
        history=history,
    )
