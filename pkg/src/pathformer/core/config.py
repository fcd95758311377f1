"""
Location: src/pathformer/core/config.py

Description: Configuration Layer for Pathformer.

Two kinds of settings live here:

1. **Project settings**: the `[tool.pathformer]` tables of `pyproject.toml`
   (output locations, selfcheck tolerances, report theme), loaded leniently.
2. **Experiment configs**: JSON files describing dataset, model and training,
   validated strictly into frozen dataclasses. Unknown keys and wrong types
   raise `ConfigError` naming the offending field.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tomllib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from pathformer.utils.errors import ConfigError

DEFAULT_POOL: Tuple[int, ...] = (2, 3, 6, 12, 16, 24, 32)
ABLATIONS: Tuple[str, ...] = ("no_inter", "no_intra", "no_decompose", "no_pathways")
TRANSFER_MODES: Tuple[str, ...] = ("none", "zero_shot", "part_tuning", "full_tuning")
THREADS_ENV = "PATHFORMER_THREADS"


def load_project_config(config_path: Path) -> Dict[str, Any]:
    """
    Loads the `tool.pathformer` block of a TOML configuration file.

    Args:
        config_path: Path to the `pyproject.toml` file.

    Returns:
        The settings dictionary, or an empty one when the file is missing or unreadable.
    """
    if not config_path.exists():
        return {}
    try:
        with open(config_path, "rb") as f:
            return tomllib.load(f).get("tool", {}).get("pathformer", {})
    except (tomllib.TOMLDecodeError, OSError):
        return {}


def resolve_thread_count() -> int:
    """Reads the worker cap from PATHFORMER_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture of one Pathformer network.

    `block_patch_sizes` may be omitted, in which case each block takes a
    contiguous window of the pool, coarse sizes first (see `patch_sizes_for`).
    """

    input_len: int = 96
    pred_len: int = 96
    channels: int = 1
    num_blocks: int = 3
    pool: Tuple[int, ...] = DEFAULT_POOL
    scales_per_block: int = 4
    block_patch_sizes: Optional[Tuple[Tuple[int, ...], ...]] = None
    top_k: int = 2
    d_model: int = 16
    k_f: int = 5
    kernels: Tuple[int, ...] = (4, 8, 12)
    keep_dc: bool = True
    residual: bool = True
    ffn: bool = False
    ffn_hidden: int = 32
    temporal_align: str = "identity"
    heads: int = 1
    predictor_hidden: int = 0
    revin_affine: bool = False
    noise: bool = True
    balance_coef: float = 0.0
    no_inter: bool = False
    no_intra: bool = False
    no_decompose: bool = False
    no_pathways: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Checks ranges and cross-field invariants."""
        for name in ("input_len", "pred_len", "channels", "num_blocks", "scales_per_block",
                     "top_k", "d_model", "k_f", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.input_len < 2:
            raise ConfigError(f"model.input_len must be >= 2, got {self.input_len}")
        if self.predictor_hidden < 0 or self.ffn_hidden < 1:
            raise ConfigError("model.predictor_hidden must be >= 0 and model.ffn_hidden >= 1")
        if self.balance_coef < 0:
            raise ConfigError(f"model.balance_coef must be >= 0, got {self.balance_coef}")
        if not self.pool or any(s < 1 for s in self.pool) or len(set(self.pool)) != len(self.pool):
            raise ConfigError(
                f"model.pool must hold distinct positive sizes, got {list(self.pool)}"
            )
        if self.top_k > self.scales_per_block:
            raise ConfigError(
                f"model.top_k ({self.top_k}) exceeds"
                f" model.scales_per_block ({self.scales_per_block})"
            )
        if self.k_f > self.input_len // 2 + 1:
            raise ConfigError(
                f"model.k_f ({self.k_f}) exceeds the spectrum length {self.input_len // 2 + 1}"
            )
        if not self.kernels or any(k < 1 for k in self.kernels) or any(
            b <= a for a, b in zip(self.kernels, self.kernels[1:])
        ):
            raise ConfigError(
                f"model.kernels must be positive and strictly increasing, got {list(self.kernels)}"
            )
        if self.temporal_align not in ("identity", "linear"):
            raise ConfigError(
                f"model.temporal_align must be 'identity' or 'linear', got {self.temporal_align!r}"
            )
        if self.no_inter and self.no_intra:
            raise ConfigError("model.no_inter and model.no_intra cannot both be set")

        if self.block_patch_sizes is None:
            if self.scales_per_block > len(self.pool):
                raise ConfigError(
                    f"model.scales_per_block ({self.scales_per_block})"
                    f" exceeds the pool size {len(self.pool)}"
                )
        elif len(self.block_patch_sizes) != self.num_blocks:
            raise ConfigError(
                f"model.block_patch_sizes lists {len(self.block_patch_sizes)} blocks, "
                f"model.num_blocks is {self.num_blocks}"
            )

        for block in range(self.num_blocks):
            sizes = self.patch_sizes_for(block)
            if len(sizes) != self.scales_per_block:
                raise ConfigError(
                    f"model.block_patch_sizes[{block}] has {len(sizes)} sizes,"
                    f" expected {self.scales_per_block}"
                )
            if len(set(sizes)) != len(sizes):
                raise ConfigError(f"model.block_patch_sizes[{block}] repeats a size: {list(sizes)}")
            for size in sizes:
                if size not in self.pool:
                    raise ConfigError(
                        f"model.block_patch_sizes[{block}]: {size} is not in the pool"
                    )
                if size > self.input_len:
                    raise ConfigError(
                        f"model.block_patch_sizes[{block}]: patch size {size}"
                        f" exceeds input_len {self.input_len}"
                    )
                if (size * self.d_model) % self.heads:
                    raise ConfigError(
                        f"model.heads ({self.heads}) must divide"
                        f" patch_size*d_model ({size * self.d_model})"
                    )

    def patch_sizes_for(self, block: int) -> Tuple[int, ...]:
        """Patch sizes of one AMS block."""
        if self.block_patch_sizes is not None:
            return tuple(self.block_patch_sizes[block])
        descending = sorted(self.pool, reverse=True)
        spare = len(descending) - self.scales_per_block
        start = 0 if self.num_blocks == 1 else (block * spare) // (self.num_blocks - 1)
        return tuple(sorted(descending[start:start + self.scales_per_block]))

    def with_ablations(self, names: Sequence[str]) -> ModelConfig:
        """Returns a copy with the named ablation flags switched on."""
        unknown = [n for n in names if n not in ABLATIONS]
        if unknown:
            raise ConfigError(f"unknown ablation(s) {unknown}; choose from {list(ABLATIONS)}")
        return dataclasses.replace(self, **{n: True for n in names})


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings (Adam, L1 loss and early stopping by default)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "l1"
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    eval_batch_size: int = 256
    max_batches_per_epoch: Optional[int] = None
    shuffle: bool = True
    seed: int = 2024
    transfer_mode: str = "none"
    raw_scale_metrics: bool = False

    def __post_init__(self) -> None:
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError(f"train.lr must be finite and >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("train.beta1/beta2 must lie in [0, 1) and train.eps must be > 0")
        if self.loss not in ("l1", "l2"):
            raise ConfigError(f"train.loss must be 'l1' or 'l2', got {self.loss!r}")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError(
                "train.max_epochs, train.batch_size and train.eval_batch_size must be >= 1"
            )
        if self.max_batches_per_epoch is not None and self.max_batches_per_epoch < 1:
            raise ConfigError("train.max_batches_per_epoch must be >= 1 when set")
        if self.transfer_mode not in TRANSFER_MODES:
            raise ConfigError(f"train.transfer_mode must be one of {list(TRANSFER_MODES)}")


@dataclass(frozen=True)
class DatasetConfig:
    """Where the data lives and how it is split; `split=None` picks the benchmark default."""

    path: str
    split: Optional[Tuple[float, float, float]] = None
    season: int = 24

    def __post_init__(self) -> None:
        if self.split is not None:
            ratios = self.split
            if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
                raise ConfigError(
                    "dataset.split must be three positive ratios summing to 1,"
                    f" got {list(self.split)}"
                )
        if self.season < 1:
            raise ConfigError(f"dataset.season must be >= 1, got {self.season}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A full experiment: dataset, model, training, output location and seed."""

    dataset: DatasetConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "data/outputs"
    seed: int = 2024

    def to_dict(self) -> Dict[str, Any]:
        """Plain-JSON form; `from_dict(to_dict())` reproduces the config."""
        return _to_plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], base_dir: Optional[Path] = None
    ) -> ExperimentConfig:
        """
        Builds a validated config.

        Args:
            data: Parsed JSON.
            base_dir: When given, a relative dataset path is resolved against it.
        """
        if not isinstance(data, Mapping):
            raise ConfigError("config root must be a JSON object")
        _reject_unknown(data, {"dataset", "model", "train", "output_dir", "seed"}, "")
        if "dataset" not in data:
            raise ConfigError("dataset: missing required section")

        dataset_raw = dict(_section(data, "dataset"))
        if base_dir is not None and "path" in dataset_raw and isinstance(dataset_raw["path"], str):
            path = Path(dataset_raw["path"])
            if not path.is_absolute():
                dataset_raw["path"] = str((base_dir / path).resolve())

        seed = _coerce(data.get("seed", 2024), int, "seed")
        train_raw = dict(_section(data, "train")) if "train" in data else {}
        train_raw.setdefault("seed", seed)
        return cls(
            dataset=_build(DatasetConfig, dataset_raw, "dataset"),
            model=_build(ModelConfig, _section(data, "model") if "model" in data else {}, "model"),
            train=_build(TrainConfig, train_raw, "train"),
            output_dir=_coerce(data.get("output_dir", "data/outputs"), str, "output_dir"),
            seed=seed,
        )


def model_config_from_dict(data: Mapping[str, Any]) -> ModelConfig:
    """Validates a plain `model` section (as echoed into checkpoints)."""
    if not isinstance(data, Mapping):
        raise ConfigError("model: expected an object")
    return _build(ModelConfig, data, "model")


def load_experiment_config(path: Path, check_paths: bool = True) -> ExperimentConfig:
    """
    Reads and validates a JSON experiment config.

    Raises:
        FileNotFoundError: If the config (or, with `check_paths`, the dataset) is missing.
        ConfigError: On malformed JSON or invalid fields.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    config = ExperimentConfig.from_dict(raw, base_dir=path.resolve().parent)
    if check_paths and not Path(config.dataset.path).exists():
        raise FileNotFoundError(f"dataset.path not found: {config.dataset.path}")
    return config


def save_experiment_config(config: ExperimentConfig, path: Path) -> None:
    """Writes a config as indented JSON."""
    Path(path).write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")


# -- validation helpers ----------------------------------------------------------------


def _section(data: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = data[name]
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(data: Mapping[str, Any], allowed: set, section: str) -> None:
    for key in data:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"{where}: unknown key")


def _build(cls: type, data: Mapping[str, Any], section: str) -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(data, names, section)
    for f in dataclasses.fields(cls):
        required = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        if required and f.name not in data:
            raise ConfigError(f"{section}.{f.name}: missing required key")
    values = {key: _coerce(value, hints[key], f"{section}.{key}") for key, value in data.items()}
    return cls(**values)


def _coerce(value: Any, hint: Any, where: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {hint!r}")


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value
