"""
Location: src/pathformer/core/router.py

Description: Multi-Scale Router for Pathformer.

Noisy top-K gating over the M patch sizes of an AMS block. The router turns
the decomposition features `x_trans` into pathway weights, keeps the K
largest and leaves the rest at zero. Surviving weights are NOT renormalised;
aggregation multiplies by the untruncated softmax weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from pathformer.core.numerics import (
    Module,
    Tensor,
    as_tensor,
    linear,
    mean,
    parameter,
    softmax,
    softplus,
    sum_,
)
from pathformer.utils.errors import ConfigError, ContractError, DimensionError


class RouterParams(Module):
    """
    Gating matrices of one router.

    Attributes:
        w_router (Tensor): W_r, shape (d, M); starts at zero so all pathways tie.
        w_noise (Tensor): W_noise, shape (d, M); scales the exploration noise.
        top_k (int): Number of pathways kept per input.
        noise_enabled (bool): Whether training-time noise is injected.
    """

    def __init__(
        self, features: int, num_scales: int, top_k: int, noise_enabled: bool = True
    ) -> None:
        if not 1 <= top_k <= num_scales:
            raise ConfigError(f"top_k must lie in [1, {num_scales}], got {top_k}")
        self.features = features
        self.num_scales = num_scales
        self.top_k = top_k
        self.noise_enabled = noise_enabled
        self.w_router = parameter(np.zeros((features, num_scales)))
        self.w_noise = parameter(np.zeros((features, num_scales)))


@dataclass(frozen=True)
class PathwayWeights:
    """
    Routing outcome for a batch of inputs.

    Attributes:
        weights (Tensor): Dense softmax weights R(x_trans), shape [..., M]; differentiable.
        mask (np.ndarray): Boolean [..., M], the selected pathways.
    """

    weights: Tensor
    mask: np.ndarray

    @property
    def dense(self) -> np.ndarray:
        return self.weights.data

    @property
    def sparse(self) -> np.ndarray:
        """R-bar: dense weights where selected, zero elsewhere."""
        return np.where(self.mask, self.weights.data, 0.0)


def topk_sparsify(dense: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Keeps the k largest entries along the last axis; ties go to the lower index.

    Returns:
        (sparse, mask); surviving weights are copied unchanged.
    """
    dense = np.asarray(dense, dtype=np.float64)
    m = dense.shape[-1]
    if not 1 <= k <= m:
        raise ConfigError(f"top-k needs 1 <= k <= {m}, got {k}")
    order = np.argsort(-dense, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(dense.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return np.where(mask, dense, 0.0), mask


def route(
    x_trans: Tensor,
    params: RouterParams,
    rng: Optional[np.random.Generator] = None,
    train_mode: bool = False,
    mask: Optional[np.ndarray] = None,
) -> PathwayWeights:
    """
    Computes pathway weights for `x_trans` of shape [..., d].

    Noise eps * softplus(x_trans W_noise), eps ~ N(0, 1), is added to the
    logits only when training with noise enabled.

    Args:
        x_trans: Decomposition features.
        params: Router matrices and K.
        rng: Noise source; required when noise applies.
        train_mode: Whether this is a training forward pass.
        mask: A previously selected pathway mask to reuse instead of top-K.
    """
    x_trans = as_tensor(x_trans)
    if x_trans.shape[-1] != params.features:
        raise DimensionError(
            f"router expects {params.features} features, got x_trans of shape {x_trans.shape}"
        )
    if params.top_k > params.num_scales:
        raise ConfigError(
            f"top_k ({params.top_k}) exceeds the number of scales ({params.num_scales})"
        )

    logits = linear(x_trans, params.w_router)
    if params.noise_enabled and train_mode:
        if rng is None:
            raise ContractError("router noise is enabled in training but no rng was supplied")
        eps = rng.standard_normal(logits.shape)
        logits = logits + softplus(linear(x_trans, params.w_noise)) * eps

    weights = softmax(logits, axis=-1)
    if mask is None:
        _, mask = topk_sparsify(weights.data, params.top_k)
    elif mask.shape != weights.shape:
        raise DimensionError(f"pathway mask {mask.shape} does not match weights {weights.shape}")
    return PathwayWeights(weights=weights, mask=mask)


def importance_penalty(pathways: PathwayWeights) -> Tensor:
    """
    Squared coefficient of variation of per-scale importance over the batch.

    Importance of a scale is the sum of its selected weights; the penalty is
    small when all scales carry similar load.
    """
    weights = pathways.weights
    flat = weights.reshape(-1, weights.shape[-1])
    importance = sum_(flat * pathways.mask.reshape(flat.shape).astype(np.float64), axis=0)
    centre = mean(importance)
    spread = mean((importance - centre) * (importance - centre))
    return spread / (centre * centre + 1e-10)
