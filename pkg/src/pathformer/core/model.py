"""
Location: src/pathformer/core/model.py

Description: Pathformer Network Assembly.

Instance Norm, a stack of AMS blocks and a fully connected Predictor, run
channel-independently: every channel of every window becomes one row of the
block batch, and all rows share the same parameters.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from pathformer.core.config import ModelConfig
from pathformer.core.mst_block import AMSBlockParams, BlockTrace, SelectionRecord, ams_forward
from pathformer.core.numerics import (
    ArrayLike,
    Linear,
    Module,
    Tensor,
    as_tensor,
    parameter,
    relu,
    reshape,
    transpose,
)
from pathformer.core.router import PathwayWeights, importance_penalty
from pathformer.utils.errors import ConfigError, ContractError, DimensionError

NORM_EPS = 1e-5


# -- instance normalisation ------------------------------------------------------------


@dataclass(frozen=True)
class NormState:
    """
    Statistics of the window being forecast.

    Attributes:
        mean (np.ndarray): Per-channel mean, shape [..., 1, C].
        std (np.ndarray): Per-channel std floored at 1e-5, shape [..., 1, C].
        affine_weight (Optional[Tensor]): Learnable scale, shape (C,).
        affine_bias (Optional[Tensor]): Learnable shift, shape (C,).
    """

    mean: np.ndarray
    std: np.ndarray
    affine_weight: Optional[Tensor] = None
    affine_bias: Optional[Tensor] = None

    @property
    def channels(self) -> int:
        return int(self.mean.shape[-1])


class InstanceNorm(Module):
    """Optional learnable affine of the instance normalisation."""

    def __init__(self, channels: int) -> None:
        self.affine_weight = parameter(np.ones(channels))
        self.affine_bias = parameter(np.zeros(channels))


def instance_normalize(
    x: ArrayLike,
    affine: Optional[InstanceNorm] = None,
    eps: float = NORM_EPS,
) -> Tuple[Tensor, NormState]:
    """
    Standardises every channel of a window [..., H, C] by its own statistics.

    The statistics are constants of the forward pass; gradients only reach the
    optional affine parameters.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise DimensionError(f"instance_normalize needs [..., H>=2, C], got {x.shape}")
    mean = x.data.mean(axis=-2, keepdims=True)
    std = np.maximum(np.sqrt(x.data.var(axis=-2, keepdims=True)), eps)
    normed = (x - mean) / std
    weight = bias = None
    if affine is not None:
        weight, bias = affine.affine_weight, affine.affine_bias
        if weight.shape != (x.shape[-1],):
            raise DimensionError(f"affine for {weight.shape[0]} channels applied to {x.shape}")
        normed = normed * weight + bias
    return normed, NormState(mean=mean, std=std, affine_weight=weight, affine_bias=bias)


def denormalize(y: ArrayLike, state: NormState, eps: float = NORM_EPS) -> Tensor:
    """Undoes the affine, rescales by std and re-adds the mean; y is [..., F, C]."""
    y = as_tensor(y)
    if y.ndim < 2 or y.shape[-1] != state.channels:
        raise DimensionError(
            f"cannot denormalize {y.shape} with statistics for {state.channels} channels"
        )
    if state.affine_weight is not None:
        y = (y - state.affine_bias) / (state.affine_weight + eps * eps)
    return y * state.std + state.mean


# -- predictor -------------------------------------------------------------------------


class Predictor(Module):
    """Fully connected head H*d_m -> F, with an optional hidden layer."""

    def __init__(
        self, in_features: int, pred_len: int, rng: np.random.Generator, hidden: int = 0
    ) -> None:
        self.in_features = in_features
        self.hidden = Linear(in_features, hidden, rng) if hidden else None
        self.output = Linear(hidden or in_features, pred_len, rng)

    def __call__(self, h: ArrayLike) -> Tensor:
        h = as_tensor(h)
        if h.shape[-1] != self.in_features:
            raise DimensionError(f"predictor expects {self.in_features} features, got {h.shape}")
        if self.hidden is not None:
            h = relu(self.hidden(h))
        return self.output(h)


# -- ablations -------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectiveArchitecture:
    """What a configuration actually computes after its ablation flags."""

    config: ModelConfig
    intra_attention: bool
    inter_attention: bool
    decomposition: bool
    adaptive_routing: bool
    scales_computed: int

    def describe(self) -> str:
        parts = [name for name, on in (
            ("intra", self.intra_attention),
            ("inter", self.inter_attention),
            ("decompose", self.decomposition),
            ("pathways", self.adaptive_routing),
        ) if on]
        return "+".join(parts) or "none"


def apply_ablation(config: ModelConfig, ablations: Sequence[str] = ()) -> EffectiveArchitecture:
    """
    Resolves ablation flags into the architecture that will run.

    Raises:
        ConfigError: For unknown flags or when both attentions are removed.
    """
    if ablations:
        config = config.with_ablations(ablations)
    if config.no_inter and config.no_intra:
        raise ConfigError("no_inter and no_intra cannot be combined")
    return EffectiveArchitecture(
        config=config,
        intra_attention=not config.no_intra,
        inter_attention=not config.no_inter,
        decomposition=not config.no_decompose,
        adaptive_routing=not config.no_pathways,
        scales_computed=config.scales_per_block if config.no_pathways else config.top_k,
    )


# -- network ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Forecast:
    """
    Output of one forward pass.

    Attributes:
        prediction (Tensor): Denormalised forecast, (F, C) or (N, F, C); differentiable.
        block_traces (Tuple[BlockTrace, ...]): Routing instrumentation per block.
        balance_loss (Optional[Tensor]): Importance penalty, when enabled.
    """

    prediction: Tensor
    block_traces: Tuple[BlockTrace, ...]
    channels: int
    balance_loss: Optional[Tensor] = None

    @property
    def values(self) -> np.ndarray:
        return self.prediction.data

    @property
    def pathway_trace(self) -> Tuple[PathwayWeights, ...]:
        """Per block, pathway weights laid out as [..., C, M]."""
        lead = self.prediction.shape[:-2]
        out = []
        for trace in self.block_traces:
            m = trace.pathways.mask.shape[-1]
            shape = lead + (self.channels, m)
            out.append(PathwayWeights(
                weights=Tensor(trace.pathways.dense.reshape(shape)),
                mask=trace.pathways.mask.reshape(shape),
            ))
        return tuple(out)

    @property
    def dual_attention_runs(self) -> int:
        return sum(trace.dual_attention_runs for trace in self.block_traces)


class Pathformer(Module):
    """
    The full forecasting network.

    Args:
        config: Validated architecture.
        seed: Seed of the parameter initialisation.
    """

    def __init__(self, config: ModelConfig, seed: int = 2024) -> None:
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.norm = InstanceNorm(config.channels) if config.revin_affine else None
        self.blocks: List[AMSBlockParams] = []
        features = 1
        for index in range(config.num_blocks):
            self.blocks.append(
                AMSBlockParams(
                    config.input_len, features, config.patch_sizes_for(index), config, rng
                )
            )
            features = config.d_model
        self.predictor = Predictor(
            config.input_len * config.d_model, config.pred_len, rng, hidden=config.predictor_hidden
        )
        for name, tensor in self.named_parameters():
            tensor.name = name

    def forward(
        self,
        x: ArrayLike,
        train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
        selections: Optional[SelectionRecord] = None,
    ) -> Forecast:
        """
        Forecasts F steps from a window (H, C) or a batch of windows (N, H, C).

        Raises:
            ContractError: If the window does not match the configured H and C.
        """
        cfg = self.config
        x = as_tensor(x)
        unbatched = x.ndim == 2
        if unbatched:
            x = reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[1:] != (cfg.input_len, cfg.channels):
            raise ContractError(
                f"model expects windows ({cfg.input_len}, {cfg.channels}), got {tuple(x.shape)}"
            )
        batch = x.shape[0]
        normed, state = instance_normalize(x, self.norm)

        # (N, H, C) -> (N*C, H, 1)
        h = reshape(transpose(normed, (0, 2, 1)), (batch * cfg.channels, cfg.input_len, 1))
        traces: List[BlockTrace] = []
        for index, block in enumerate(self.blocks):
            h, trace = ams_forward(h, block, train_mode=train_mode, rng=rng,
                                   selections=selections, key=f"blocks.{index}")
            traces.append(trace)

        flat = reshape(h, (batch * cfg.channels, cfg.input_len * cfg.d_model))
        y = reshape(self.predictor(flat), (batch, cfg.channels, cfg.pred_len))
        prediction = denormalize(transpose(y, (0, 2, 1)), state)
        if unbatched:
            prediction = reshape(prediction, prediction.shape[1:])

        balance = None
        if cfg.balance_coef > 0 and not cfg.no_pathways:
            for trace in traces:
                term = importance_penalty(trace.pathways) * cfg.balance_coef
                balance = term if balance is None else balance + term
        return Forecast(prediction=prediction, block_traces=tuple(traces),
                        channels=cfg.channels, balance_loss=balance)

    __call__ = forward

    # -- parameter state --------------------------------------------------------------

    def state(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter, by name."""
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state(
        self, state: Mapping[str, np.ndarray], skip_prefixes: Sequence[str] = ()
    ) -> None:
        """
        Overwrites parameters in place.

        Raises:
            ContractError: Listing every missing, unexpected or mis-shaped key.
        """
        skip = tuple(skip_prefixes)
        params = {n: t for n, t in self.named_parameters() if not n.startswith(skip)}
        incoming = {n: v for n, v in state.items() if not n.startswith(skip)}
        problems = [f"missing {n}" for n in params if n not in incoming]
        problems += [f"unexpected {n}" for n in incoming if n not in params]
        problems += [
            f"{n}: {np.shape(incoming[n])} vs {params[n].shape}"
            for n in params
            if n in incoming and tuple(np.shape(incoming[n])) != params[n].shape
        ]
        if problems:
            raise ContractError("incompatible parameters: " + "; ".join(problems))
        for name, tensor in params.items():
            tensor.data[...] = np.asarray(incoming[name], dtype=tensor.data.dtype)

    def copy(self) -> Pathformer:
        """An independent model with the same config and parameter values."""
        clone = Pathformer(self.config, self.seed)
        clone.load_state(self.state())
        return clone

    def rebuild_for_channels(self, channels: int) -> Pathformer:
        """
        Same weights for a different channel count. Channel-specific affine
        parameters restart from identity.
        """
        clone = Pathformer(dataclasses.replace(self.config, channels=channels), self.seed)
        clone.load_state(self.state(), skip_prefixes=("norm.",))
        return clone

    def parameter_count(self, names: Optional[Sequence[str]] = None) -> int:
        params = self.parameters()
        keys = params if names is None else names
        return sum(params[k].size for k in keys)
