"""
Location: src/pathformer/core/decomposition.py

Description: Temporal Decomposition front-end of the multi-scale router.

The router does not look at the raw input alone. It first separates:

1. **Seasonality**: the K_f strongest Fourier components (plus the mean bin).
2. **Trend**: a softmax-weighted mixture of moving averages of the remainder.

and then merges input, seasonality and trend along the time axis into the
feature vector `x_trans` the routing function consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from pathformer.core.numerics import (
    Linear,
    Module,
    Tensor,
    as_tensor,
    avg_pool_same,
    fourier_project,
    reshape,
    softmax,
    take,
    transpose,
)
from pathformer.utils.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class DecompositionResult:
    """Seasonality, remainder, trend and the merged routing features of one input."""

    x_sea: Tensor
    x_rem: Tensor
    x_trend: Tensor
    x_trans: Tensor


class DecompositionParams(Module):
    """
    Learnable maps of the decomposition.

    Attributes:
        k_f (int): Number of non-DC frequencies kept by seasonality extraction.
        kernels (Tuple[int, ...]): Moving-average kernels, strictly increasing.
        keep_dc (bool): Whether the mean bin is always kept.
        kernel_weight_map (Linear): Flattened remainder (H*d) -> one logit per kernel.
        merge_map (Linear): Temporal collapse H -> 1, shared across features.
    """

    def __init__(
        self,
        length: int,
        features: int,
        k_f: int,
        kernels: Sequence[int],
        rng: np.random.Generator,
        keep_dc: bool = True,
    ) -> None:
        if not 1 <= k_f <= length // 2 + 1:
            raise ConfigError(f"k_f must lie in [1, {length // 2 + 1}], got {k_f}")
        if not kernels:
            raise ConfigError("decomposition needs at least one pooling kernel")
        if any(k < 1 for k in kernels) or any(b <= a for a, b in zip(kernels, kernels[1:])):
            raise ConfigError(
                f"kernels must be positive and strictly increasing, got {list(kernels)}"
            )
        self.length = length
        self.features = features
        self.k_f = k_f
        self.kernels: Tuple[int, ...] = tuple(kernels)
        self.keep_dc = keep_dc
        self.kernel_weight_map = Linear(length * features, len(self.kernels), rng)
        self.merge_map = Linear(length, 1, rng)

    def decompose(self, x: Tensor, keep: Optional[np.ndarray] = None) -> DecompositionResult:
        """Runs seasonality, trend and merge on `x` of shape [..., H, d]."""
        x_sea, x_rem = seasonality_decompose(x, self.k_f, keep_dc=self.keep_dc, keep=keep)
        x_trend = trend_decompose(x_rem, self)
        x_trans = merge_transform(x, x_sea, x_trend, self.merge_map)
        return DecompositionResult(x_sea, x_rem, x_trend, x_trans)


def frequency_mask(x: np.ndarray, k_f: int, keep_dc: bool = True) -> np.ndarray:
    """
    Selects the k_f largest-amplitude bins of every series along axis -2.

    Ties go to the lower frequency index. With `keep_dc` the mean bin is kept
    on top of the k_f largest non-DC bins.

    Returns:
        Boolean mask of shape [..., H//2 + 1, d].
    """
    amplitudes = np.abs(np.fft.rfft(x, axis=-2))
    bins = amplitudes.shape[-2]
    if not 1 <= k_f <= bins:
        raise ConfigError(f"k_f must lie in [1, {bins}], got {k_f}")
    ranking = amplitudes.copy()
    if keep_dc:
        ranking[..., 0, :] = -np.inf
        k_f = min(k_f, bins - 1)
    order = np.argsort(-ranking, axis=-2, kind="stable")
    mask = np.zeros(amplitudes.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :k_f, :], True, axis=-2)
    if keep_dc:
        mask[..., 0, :] = True
    return mask


def seasonality_decompose(
    x: Tensor,
    k_f: int,
    keep_dc: bool = True,
    keep: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Tensor]:
    """
    Splits `x` [..., H, d] into its dominant periodic part and the remainder.

    Args:
        x: Input series.
        k_f: Number of kept frequencies.
        keep_dc: Keep the mean bin in addition to the k_f strongest bins.
        keep: A previously selected frequency mask to reuse instead of selecting.

    Returns:
        (x_sea, x_rem) with x_rem = x - x_sea.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ConfigError(f"seasonality decomposition needs [..., H>=2, d], got {x.shape}")
    if keep is None:
        keep = frequency_mask(x.data, k_f, keep_dc)
    x_sea = fourier_project(x, keep)
    return x_sea, x - x_sea


def trend_decompose(x_rem: Tensor, params: DecompositionParams) -> Tensor:
    """
    Softmax-weighted mixture of moving averages of the remainder.

    One weight per kernel, shared across time steps and features, produced by
    `kernel_weight_map` from the flattened remainder.
    """
    if not params.kernels:
        raise ConfigError("decomposition needs at least one pooling kernel")
    x_rem = as_tensor(x_rem)
    lead = x_rem.shape[:-2]
    flat = reshape(x_rem, lead + (x_rem.shape[-2] * x_rem.shape[-1],))
    weights = softmax(params.kernel_weight_map(flat), axis=-1)

    trend: Optional[Tensor] = None
    for index, kernel in enumerate(params.kernels):
        w = reshape(take(weights, [index], axis=-1), lead + (1, 1))
        term = avg_pool_same(x_rem, kernel) * w
        trend = term if trend is None else trend + term
    return trend


def merge_transform(
    x: Tensor,
    x_sea: Optional[Tensor],
    x_trend: Optional[Tensor],
    merge_map: Linear,
) -> Tensor:
    """
    Collapses x + x_sea + x_trend along time into one value per feature.

    Passing None for both components merges the raw input only (the
    decomposition-free variant).

    Returns:
        Tensor of shape [..., d].
    """
    x = as_tensor(x)
    total = x
    for part in (x_sea, x_trend):
        if part is None:
            continue
        if part.shape != x.shape:
            raise DimensionError(f"merge_transform shape mismatch: {x.shape} vs {part.shape}")
        total = total + part
    axes = tuple(range(total.ndim - 2)) + (total.ndim - 1, total.ndim - 2)
    merged = merge_map(transpose(total, axes))
    return reshape(merged, merged.shape[:-1])
