"""
Location: src/pathformer/utils/paths.py

Description: Global Path Registry for Pathformer.

This module centralizes the filesystem logic so that the CLI, the trainer and
the checkpoint writer agree on where datasets, configs and artifacts live. It
also creates the required directory infrastructure upon import.
"""

from pathlib import Path
from typing import List

# 1. Project Root Identification
# Resolves the absolute path to the project base (pathformer/)
BASE_DIR: Path = Path(__file__).resolve().parent.parent.parent.parent

# 2. Data Directory Definitions
# INPUT_DIR: CSV datasets (generated or downloaded by the user).
# CONFIG_DIR: Example experiment configurations.
# OUTPUT_DIR: Default destination for checkpoints, metrics and reports.
DATA_DIR: Path = BASE_DIR / "data"
INPUT_DIR: Path = DATA_DIR / "inputs"
CONFIG_DIR: Path = DATA_DIR / "configs"
OUTPUT_DIR: Path = DATA_DIR / "outputs"

# 3. Artifact names written into an output directory
CHECKPOINT_NAME: str = "model.ckpt"
METRICS_NAME: str = "metrics.json"


def initialize_directories() -> None:
    """
    Validates and creates the necessary directory infrastructure.

    Ensures the `data` boundaries exist before any command reads or writes
    artifacts, so a fresh checkout can run `pathformer synth` straight away.
    """
    required_dirs: List[Path] = [
        INPUT_DIR,
        OUTPUT_DIR,
    ]

    for directory in required_dirs:
        directory.mkdir(parents=True, exist_ok=True)


def resolve_output_dir(output: Path | None) -> Path:
    """Returns the requested output directory (or the default), creating it."""
    target = Path(output) if output is not None else OUTPUT_DIR
    target.mkdir(parents=True, exist_ok=True)
    return target


# Immediate execution ensures the filesystem is ready for the engines.
if __name__ != "__main__":
    initialize_directories()
