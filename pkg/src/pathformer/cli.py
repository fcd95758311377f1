"""
Location: src/pathformer/cli.py

Description: Orchestration Layer for Pathformer.

This module is the command-line entry point. It coordinates:

1. **Configuration**: experiment JSON plus `[tool.pathformer]` project settings.
2. **Training**: fitting, early stopping, checkpoint and metrics export.
3. **Evaluation**: metrics, pathway reports, ablations and transfer runs.
4. **Forecasting**: raw-scale predictions from a CSV window.

Every `run_*` function holds the logic of one command so it can be called
without the Typer layer.
"""

from __future__ import annotations

import dataclasses
import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from pathformer.core.baselines import baseline_metrics
from pathformer.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from pathformer.core.config import (
    ABLATIONS,
    ExperimentConfig,
    load_experiment_config,
    load_project_config,
    save_experiment_config,
)
from pathformer.core.data import Dataset, load_csv, save_csv, synthetic_series
from pathformer.core.inference import forecast_frames, inspect_pathways
from pathformer.core.model import Pathformer, apply_ablation
from pathformer.core.selfcheck import SelfcheckSettings, run_selfcheck
from pathformer.core.training import Metrics, evaluate, train, transfer
from pathformer.utils.errors import PathformerError
from pathformer.utils.paths import CHECKPOINT_NAME, INPUT_DIR, METRICS_NAME, resolve_output_dir

app = typer.Typer(
    name="pathformer",
    help="Time-series forecasting with routed multi-scale attention.",
    no_args_is_help=True,
    add_completion=False,
)
console = Console()
err_console = Console(stderr=True)

DEFAULT_CONFIG = Path("pyproject.toml")
DEFAULT_THEME = {"metric": "cyan", "good": "green", "bad": "red", "header": "bold cyan"}


def project_settings(section: str) -> Dict[str, Any]:
    """One `[tool.pathformer.<section>]` table, empty when absent."""
    return load_project_config(DEFAULT_CONFIG).get(section, {})


@contextmanager
def _guard() -> Iterator[None]:
    """Turns engine failures into a one-line diagnostic on stderr and exit code 1."""
    try:
        yield
    except (PathformerError, FileNotFoundError) as exc:
        err_console.print(f"[bold red]Error:[/] {exc}")
        raise typer.Exit(code=1) from exc


# -- shared plumbing ---------------------------------------------------------------------


def prepare(
    config_path: Path,
    seed: Optional[int] = None,
    ablate: Sequence[str] = (),
    top_k: Optional[int] = None,
) -> Tuple[ExperimentConfig, Dataset]:
    """Loads the config, applies CLI overrides and reads the dataset."""
    config = load_experiment_config(config_path)
    model_cfg = config.model
    if top_k is not None:
        model_cfg = dataclasses.replace(model_cfg, top_k=top_k)
    if ablate:
        model_cfg = apply_ablation(model_cfg, ablate).config
    if seed is not None:
        train = dataclasses.replace(config.train, seed=seed)
        config = dataclasses.replace(config, seed=seed, train=train)
    dataset = load_csv(Path(config.dataset.path), split=config.dataset.split)
    model_cfg = dataclasses.replace(model_cfg, channels=dataset.num_channels)
    return dataclasses.replace(config, model=model_cfg), dataset


def output_dir(config: ExperimentConfig, output: Optional[Path]) -> Path:
    return resolve_output_dir(output if output is not None else Path(config.output_dir))


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def display_metrics(title: str, rows: Dict[str, Metrics]) -> None:
    """Renders a Rich table of metrics, one row per run."""
    theme = {**DEFAULT_THEME, **project_settings("report").get("theme", {})}
    table = Table(title=title, title_style=theme["header"])
    table.add_column("Run", style="bold")
    table.add_column("MSE", style=theme["metric"], justify="right")
    table.add_column("MAE", style=theme["metric"], justify="right")
    table.add_column("Windows", justify="right")
    for name, metrics in rows.items():
        table.add_row(name, f"{metrics.mse:.4f}", f"{metrics.mae:.4f}", str(metrics.windows))
    console.print(table)


def load_model(
    checkpoint: Path, config: Optional[ExperimentConfig] = None
) -> Tuple[Pathformer, Checkpoint]:
    """Restores a model, re-targeted to the config's channel count when one is given."""
    stored = load_checkpoint(checkpoint)
    model = stored.build_model()
    if config is not None and config.model.channels != stored.config.channels:
        model = model.rebuild_for_channels(config.model.channels)
    return model, stored


# -- command logic -----------------------------------------------------------------------


def run_train(
    config_path: Path,
    output: Optional[Path] = None,
    seed: Optional[int] = None,
    ablate: Sequence[str] = (),
    top_k: Optional[int] = None,
    verbose: bool = True,
) -> Metrics:
    """Trains, saves the checkpoint and writes metrics, history and baselines."""
    config, dataset = prepare(config_path, seed, ablate, top_k)
    out = output_dir(config, output)
    console.print(f"\n[bold blue]Phase 1:[/] Training on [cyan]{dataset.name}[/] "
                  f"({dataset.length} rows, {dataset.num_channels} channels)")
    started = time.perf_counter()
    model = Pathformer(config.model, seed=config.seed)
    history = train(model, dataset, config.train, verbose=verbose)
    console.print(f"  [bold green]✓[/] Best epoch {history.best_epoch}, "
                  f"validation loss {history.best_val_loss:.4f}")

    console.print("[bold blue]Phase 2:[/] Evaluating on the test split")
    metrics = evaluate(model, dataset, "test", config.train)
    metrics = dataclasses.replace(metrics, wall_clock_s=time.perf_counter() - started)
    baselines = baseline_metrics(
        dataset, config.model.input_len, config.model.pred_len, config.dataset.season
    )

    save_checkpoint(out / CHECKPOINT_NAME, model, stats=dataset.stats)
    write_json(out / METRICS_NAME, metrics.to_dict())
    write_json(out / "baselines.json", {name: m.to_dict() for name, m in baselines.items()})
    history.to_frame().to_csv(out / "history.csv", index=False)
    save_experiment_config(config, out / "config.json")
    display_metrics("Test Metrics", {"pathformer": metrics, **baselines})
    console.print(f"  [bold green]✓[/] Artifacts written to [cyan]{out}[/]")
    return metrics


def run_eval(
    config_path: Path,
    checkpoint: Optional[Path] = None,
    output: Optional[Path] = None,
    split: str = "test",
) -> Metrics:
    """Evaluates a saved model on one split of the configured dataset."""
    config, dataset = prepare(config_path)
    out = output_dir(config, output)
    model, _ = load_model(checkpoint or out / CHECKPOINT_NAME, config)
    metrics = evaluate(model, dataset, split, config.train)
    write_json(out / METRICS_NAME, metrics.to_dict())
    display_metrics(f"{split.capitalize()} Metrics", {"pathformer": metrics})
    return metrics


def run_forecast(
    checkpoint: Path,
    input_csv: Path,
    output: Optional[Path] = None,
) -> pd.DataFrame:
    """Forecasts F steps after the last H rows of a raw CSV."""
    model, stored = load_model(checkpoint)
    source = load_csv(input_csv)
    forecast, tail = forecast_frames(model, source, stored.stats)
    out = resolve_output_dir(output)
    forecast.to_csv(out / "forecast.csv", index=False, float_format="%.10g")
    tail.to_csv(out / "forecast_input.csv", index=False, float_format="%.10g")
    written = out / "forecast.csv"
    console.print(f"  [bold green]✓[/] {len(forecast)} rows written to [cyan]{written}[/]")
    return forecast


def run_transfer(
    config_path: Path,
    checkpoint: Path,
    mode: Optional[str] = None,
    output: Optional[Path] = None,
    seed: Optional[int] = None,
    verbose: bool = True,
) -> Dict[str, Any]:
    """Moves a pretrained checkpoint onto the configured (target) dataset."""
    config, dataset = prepare(config_path, seed)
    out = output_dir(config, output)
    if mode is None:
        configured = config.train.transfer_mode
        mode = configured if configured != "none" else "part_tuning"
    pretrained, _ = load_model(checkpoint)
    console.print(f"\n[bold blue]Transfer:[/] [cyan]{mode}[/] onto [cyan]{dataset.name}[/]")
    result = transfer(
        pretrained, dataset, mode, config.train, model_config=config.model, verbose=verbose
    )
    save_checkpoint(out / CHECKPOINT_NAME, result.model, stats=dataset.stats)
    write_json(out / METRICS_NAME, result.metrics.to_dict())
    payload = result.to_dict()
    write_json(out / "transfer.json", payload)
    display_metrics("Transfer Metrics", {mode: result.metrics})
    console.print(
        f"  [dim]trainable parameters {result.trainable_parameters}"
        f" of {result.total_parameters}[/]"
    )
    return payload


def run_inspect_pathways(
    config_path: Path,
    checkpoint: Optional[Path] = None,
    output: Optional[Path] = None,
    split: str = "test",
) -> pd.DataFrame:
    """Writes the average routing weights per block and patch size."""
    config, dataset = prepare(config_path)
    out = output_dir(config, output)
    model, _ = load_model(checkpoint or out / CHECKPOINT_NAME, config)
    frame = inspect_pathways(model, dataset, split).to_frame()
    frame.to_csv(out / "pathways.csv", index=False)

    table = Table(title="Pathway Weights", title_style="bold cyan")
    for column in frame.columns:
        table.add_column(column, justify="right")
    for row in frame.itertuples(index=False):
        table.add_row(
            str(row.block), str(row.patch_size),
            f"{row.mean_weight:.4f}", f"{row.selection_rate:.4f}",
        )
    console.print(table)
    return frame


def run_ablate(
    config_path: Path,
    output: Optional[Path] = None,
    seed: Optional[int] = None,
    top_k: Optional[int] = None,
    variants: Sequence[str] = ABLATIONS,
    verbose: bool = False,
) -> pd.DataFrame:
    """Trains the full model and every ablation, one row each in ablation.csv."""
    config, dataset = prepare(config_path, seed, top_k=top_k)
    out = output_dir(config, output)
    rows: List[Dict[str, Any]] = []
    results: Dict[str, Metrics] = {}
    for variant in ("full", *variants):
        flags = () if variant == "full" else (variant,)
        architecture = apply_ablation(config.model, flags)
        console.print(f"[bold blue]Ablation:[/] [cyan]{variant}[/] ({architecture.describe()})")
        model = Pathformer(architecture.config, seed=config.seed)
        train(model, dataset, config.train, verbose=verbose)
        metrics = evaluate(model, dataset, "test", config.train)
        sample_window = dataset.split_values("test")[: config.model.input_len]
        runs = model.forward(sample_window).dual_attention_runs / dataset.num_channels
        results[variant] = metrics
        rows.append({"variant": variant, "mse": metrics.mse, "mae": metrics.mae,
                     "dual_attention_runs_per_sample": runs})
    frame = pd.DataFrame(rows, columns=["variant", "mse", "mae", "dual_attention_runs_per_sample"])
    frame.to_csv(out / "ablation.csv", index=False)
    display_metrics("Ablations", results)
    return frame


def run_synth(
    output: Path,
    length: int = 2000,
    channels: int = 1,
    variant: str = "a",
    seed: int = 2024,
) -> Path:
    """Writes a synthetic sinusoid dataset as CSV."""
    path = save_csv(synthetic_series(length, channels, seed, variant), output)
    console.print(
        f"  [bold green]✓[/] Synthetic dataset ({length} x {channels}) written to [cyan]{path}[/]"
    )
    return path


def run_self_check(seeds: Optional[int] = None) -> bool:
    """Runs the invariant suite and prints one row per check."""
    settings = SelfcheckSettings.from_project(project_settings("selfcheck"))
    if seeds is not None:
        settings = dataclasses.replace(settings, seeds=seeds)
    results = run_selfcheck(settings)
    table = Table(title="Selfcheck", title_style="bold cyan")
    table.add_column("Check", style="bold")
    table.add_column("Status")
    table.add_column("Detail")
    table.add_column("Seconds", justify="right")
    for result in results:
        status = "[green]pass[/]" if result.passed else "[red]FAIL[/]"
        table.add_row(result.name, status, result.detail, f"{result.seconds:.1f}")
    console.print(table)
    return all(r.passed for r in results)


# -- Typer commands ----------------------------------------------------------------------

ConfigOption = typer.Option(..., "--config", "-c", help="Experiment config (JSON)")
OutputOption = typer.Option(None, "--output", "-o", help="Output directory")
SeedOption = typer.Option(None, "--seed", help="Override the experiment seed")
CheckpointOption = typer.Option(None, "--checkpoint", help="Model checkpoint file")
TopKOption = typer.Option(None, "--top-k", help="Override the number of selected pathways")


@app.command(name="train")
def train_command(
    config: Path = ConfigOption,
    output: Optional[Path] = OutputOption,
    seed: Optional[int] = SeedOption,
    ablate: Optional[List[str]] = typer.Option(
        None, "--ablate", help=f"One of {', '.join(ABLATIONS)}"
    ),
    top_k: Optional[int] = TopKOption,
) -> None:
    """Trains a model and exports checkpoint, metrics and baselines."""
    with _guard():
        run_train(config, output, seed, ablate or (), top_k)


@app.command(name="eval")
def eval_command(
    config: Path = ConfigOption,
    checkpoint: Optional[Path] = CheckpointOption,
    output: Optional[Path] = OutputOption,
    split: str = typer.Option("test", "--split", help="train, val or test"),
) -> None:
    """Evaluates a checkpoint on the configured dataset."""
    with _guard():
        run_eval(config, checkpoint, output, split)


@app.command(name="forecast")
def forecast_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint file"),
    input_csv: Path = typer.Option(..., "--input", "-i", help="CSV with at least H rows"),
    output: Optional[Path] = OutputOption,
) -> None:
    """Forecasts the steps following the last window of a CSV."""
    with _guard():
        run_forecast(checkpoint, input_csv, output)


@app.command(name="transfer")
def transfer_command(
    config: Path = ConfigOption,
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Pretrained checkpoint"),
    mode: Optional[str] = typer.Option(
        None, "--transfer", help="zero_shot, part_tuning or full_tuning"
    ),
    output: Optional[Path] = OutputOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Transfers a pretrained model to the configured dataset."""
    with _guard():
        run_transfer(config, checkpoint, mode, output, seed)


@app.command(name="inspect-pathways")
def inspect_pathways_command(
    config: Path = ConfigOption,
    checkpoint: Optional[Path] = CheckpointOption,
    output: Optional[Path] = OutputOption,
    split: str = typer.Option("test", "--split", help="train, val or test"),
) -> None:
    """Exports average pathway weights per block and patch size."""
    with _guard():
        run_inspect_pathways(config, checkpoint, output, split)


@app.command(name="ablate")
def ablate_command(
    config: Path = ConfigOption,
    output: Optional[Path] = OutputOption,
    seed: Optional[int] = SeedOption,
    top_k: Optional[int] = TopKOption,
) -> None:
    """Trains the full model and the four ablations."""
    with _guard():
        run_ablate(config, output, seed, top_k)


@app.command(name="selfcheck")
def selfcheck_command(
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Finite-difference seeds"),
) -> None:
    """Runs the gradient, Fourier, routing and shape invariant suite."""
    with _guard():
        passed = run_self_check(seeds)
    if not passed:
        raise typer.Exit(code=1)


@app.command(name="synth")
def synth_command(
    output: Path = typer.Option(INPUT_DIR / "synthetic.csv", "--output", "-o", help="CSV path"),
    length: int = typer.Option(2000, "--length", help="Number of rows"),
    channels: int = typer.Option(1, "--channels", help="Number of channels"),
    variant: str = typer.Option("a", "--variant", help="a (source) or b (transfer target)"),
    seed: int = typer.Option(2024, "--seed", help="Noise and phase seed"),
) -> None:
    """Generates a synthetic sinusoid dataset."""
    with _guard():
        run_synth(output, length, channels, variant, seed)


def run_command(argv: Sequence[str]) -> int:
    """Runs one command line and returns its exit code."""
    try:
        app(args=list(argv), prog_name="pathformer", standalone_mode=True)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 1)
    return 0


def main() -> None:
    """Main entry point."""
    app()


if __name__ == "__main__":
    main()
