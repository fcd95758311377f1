"""
Location: src/pathformer/core/checkpoint.py

Description: Model Checkpoint Container.

A self-describing little-endian binary file: magic, format version, a JSON
echo of the model config, then named tensors (parameters and buffers) with
their shapes and row-major float64 data. The byte layout is documented in
docs/checkpoint_format.md.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple

import numpy as np

from pathformer.core.config import ModelConfig, model_config_from_dict
from pathformer.core.model import Pathformer
from pathformer.utils.errors import ContractError

MAGIC = b"PFMR"
FORMAT_VERSION = 1
KIND_PARAMETER = 0
KIND_BUFFER = 1
STATS_MEAN = "stats.mean"
STATS_STD = "stats.std"

_FLOAT = np.dtype("<f8")


@dataclass
class Checkpoint:
    """
    Decoded checkpoint contents.

    Attributes:
        config (ModelConfig): Architecture the parameters belong to.
        seed (int): Initialisation seed of the saved model.
        parameters (Dict[str, np.ndarray]): Trainable tensors by name.
        buffers (Dict[str, np.ndarray]): Non-trainable tensors (dataset statistics).
    """

    config: ModelConfig
    seed: int = 2024
    parameters: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def stats(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Train-split (mean, std) of the dataset the model was fitted on, if stored."""
        if STATS_MEAN in self.buffers and STATS_STD in self.buffers:
            return self.buffers[STATS_MEAN], self.buffers[STATS_STD]
        return None

    def build_model(self) -> Pathformer:
        """Instantiates the network and loads the stored parameters."""
        model = Pathformer(self.config, self.seed)
        model.load_state(self.parameters)
        return model


def _write_tensor(handle: BinaryIO, name: str, kind: int, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    values = np.ascontiguousarray(values, dtype=_FLOAT)
    handle.write(struct.pack("<H", len(encoded)))
    handle.write(encoded)
    handle.write(struct.pack("<BB", kind, values.ndim))
    handle.write(struct.pack(f"<{values.ndim}I", *values.shape))
    handle.write(values.tobytes(order="C"))


def save_checkpoint(
    path: Path,
    model: Pathformer,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Path:
    """
    Writes `model` (and optionally the dataset statistics) to `path`.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    echo = json.dumps(
        {"model": dataclasses.asdict(model.config), "seed": model.seed},
        sort_keys=True,
    ).encode("utf-8")
    tensors = [(name, KIND_PARAMETER, values) for name, values in model.state().items()]
    if stats is not None:
        tensors.append((STATS_MEAN, KIND_BUFFER, np.asarray(stats[0])))
        tensors.append((STATS_STD, KIND_BUFFER, np.asarray(stats[1])))

    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<II", FORMAT_VERSION, len(echo)))
        handle.write(echo)
        handle.write(struct.pack("<I", len(tensors)))
        for name, kind, values in tensors:
            _write_tensor(handle, name, kind, values)
    return path


class _Reader:
    def __init__(self, payload: bytes, path: Path) -> None:
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise ContractError(f"{self.path}: truncated checkpoint at byte {self.offset}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Reads a checkpoint written by `save_checkpoint`.

    Raises:
        FileNotFoundError: If the file is missing.
        ContractError: On a foreign, truncated or newer-version file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise ContractError(f"{path}: not a pathformer checkpoint")
    version, echo_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    try:
        echo = json.loads(reader.take(echo_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractError(f"{path}: corrupt config echo") from exc
    if not isinstance(echo, dict):
        raise ContractError(f"{path}: corrupt config echo")

    checkpoint = Checkpoint(
        config=model_config_from_dict(echo.get("model")),
        seed=int(echo.get("seed", 2024)),
    )
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        kind, ndim = reader.unpack("<BB")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(size * _FLOAT.itemsize), dtype=_FLOAT).reshape(shape)
        target = checkpoint.parameters if kind == KIND_PARAMETER else checkpoint.buffers
        target[name] = values.astype(np.float64)
    if reader.offset != len(reader.payload):
        raise ContractError(f"{path}: {len(reader.payload) - reader.offset} trailing bytes")
    return checkpoint

