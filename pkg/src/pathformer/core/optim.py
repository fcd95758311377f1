"""
Location: src/pathformer/core/optim.py

Description: Adam optimiser over named parameter tensors.
"""

from __future__ import annotations

from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from pathformer.core.numerics import Tensor
from pathformer.utils.errors import ConfigError, ContractError


class Adam:
    """
    Adaptive moment estimation with bias correction.

    Only the names passed as `trainable` are ever updated; every other tensor
    keeps its exact bytes.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        trainable: Optional[Iterable[str]] = None,
    ) -> None:
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params = dict(params)
        self.trainable = list(self.params if trainable is None else trainable)
        unknown = [n for n in self.trainable if n not in self.params]
        if unknown:
            raise ContractError(f"cannot train unknown parameters: {unknown}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {
            n: np.zeros_like(self.params[n].data) for n in self.trainable
        }
        self.v: Dict[str, np.ndarray] = {
            n: np.zeros_like(self.params[n].data) for n in self.trainable
        }

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        """Applies one update from a name -> gradient mapping."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in self.trainable:
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[name].data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
