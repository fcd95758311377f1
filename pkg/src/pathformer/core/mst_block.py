"""
Location: src/pathformer/core/mst_block.py

Description: Adaptive Multi-Scale (AMS) Block.

One block of the network. For each patch size the router selects it:

1. **Division**: pads the series at the front and cuts it into P patches of S steps.
2. **Dual attention**: intra-patch cross-attention with a learned query, and
   inter-patch self-attention over flattened patches.
3. **Fusion**: expands the intra output back to S steps and adds the inter output.

The selected scales are then aggregated with their pathway weights. Scales
the router leaves out are never computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pathformer.core.config import ModelConfig
from pathformer.core.decomposition import DecompositionParams, frequency_mask, merge_transform
from pathformer.core.numerics import (
    Linear,
    Module,
    Tensor,
    as_tensor,
    matmul,
    parameter,
    relu,
    reshape,
    scatter,
    softmax,
    take,
    transpose,
    uniform_init,
)
from pathformer.core.router import PathwayWeights, RouterParams, route
from pathformer.utils.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class ScaleSpec:
    """Patch geometry of one scale: P = ceil(H / S), pad_len = P*S - H < S."""

    patch_size: int
    patch_count: int
    pad_len: int

    @classmethod
    def for_length(cls, length: int, patch_size: int) -> ScaleSpec:
        if patch_size < 1:
            raise ConfigError(f"patch size must be >= 1, got {patch_size}")
        if patch_size > length:
            raise ConfigError(f"patch size {patch_size} exceeds series length {length}")
        count = -(-length // patch_size)
        return cls(patch_size=patch_size, patch_count=count, pad_len=count * patch_size - length)


@dataclass
class SelectionRecord:
    """
    Router and frequency selections, recorded on first use and replayed after.

    Passing the same record to repeated forward calls freezes every discrete
    choice, which is what finite-difference gradient checks need.
    """

    masks: Dict[str, np.ndarray] = field(default_factory=dict)

    def resolve(self, key: str, compute: Callable[[], np.ndarray]) -> np.ndarray:
        if key not in self.masks:
            self.masks[key] = compute()
        return self.masks[key]


@dataclass(frozen=True)
class BlockTrace:
    """
    Instrumentation of one block forward.

    Attributes:
        pathways (PathwayWeights): Routing outcome per row of the batch.
        scale_runs (Tuple[int, ...]): Rows that executed each scale's dual attention.
        dual_attention_runs (int): Total (row, scale) executions.
    """

    pathways: PathwayWeights
    scale_runs: Tuple[int, ...]
    dual_attention_runs: int


def _swap_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


class FeedForward(Module):
    """Optional position-wise sublayer d_m -> hidden -> d_m."""

    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator) -> None:
        self.expand = Linear(d_model, hidden, rng)
        self.project = Linear(hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(relu(self.expand(x)))


class TemporalAlign(Module):
    """Learned T_i: an (H -> H) linear map along the time axis."""

    def __init__(self, length: int, rng: np.random.Generator) -> None:
        self.mix = Linear(length, length, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return _swap_last(self.mix(_swap_last(x)))


class DualAttentionParams(Module):
    """
    Learnable tensors of one scale.

    Attributes:
        patch_size (int): S.
        embed (Linear): Feature embedding d -> d_m.
        intra_query (Tensor): The learned query Q_intra, shape (1, d_m).
        intra_key, intra_value (Linear): d_m -> d_m.
        expand (Linear): 1 -> S map along the patch-length axis, shared across patches.
        inter_query, inter_key, inter_value (Linear): d'_m -> d'_m with d'_m = S * d_m.
    """

    def __init__(
        self,
        patch_size: int,
        in_features: int,
        d_model: int,
        rng: np.random.Generator,
        heads: int = 1,
        ffn_hidden: Optional[int] = None,
    ) -> None:
        d_inter = patch_size * d_model
        if d_inter % heads:
            raise ConfigError(f"heads ({heads}) must divide S*d_m ({d_inter})")
        self.patch_size = patch_size
        self.d_model = d_model
        self.heads = heads
        self.embed = Linear(in_features, d_model, rng)
        self.intra_query = parameter(uniform_init(rng, (1, d_model), d_model))
        self.intra_key = Linear(d_model, d_model, rng)
        self.intra_value = Linear(d_model, d_model, rng)
        self.expand = Linear(1, patch_size, rng)
        self.inter_query = Linear(d_inter, d_inter, rng)
        self.inter_key = Linear(d_inter, d_inter, rng)
        self.inter_value = Linear(d_inter, d_inter, rng)
        self.ffn = FeedForward(d_model, ffn_hidden, rng) if ffn_hidden else None


def patch_divide(x: Tensor, patch_size: int) -> Tensor:
    """
    Cuts [..., H, d] into [..., P, S, d], replicating the first row to fill the front pad.
    """
    x = as_tensor(x)
    spec = ScaleSpec.for_length(x.shape[-2], patch_size)
    indices = np.concatenate([np.zeros(spec.pad_len, dtype=np.intp), np.arange(x.shape[-2])])
    padded = take(x, indices, axis=-2) if spec.pad_len else x
    return reshape(padded, x.shape[:-2] + (spec.patch_count, patch_size, x.shape[-1]))


def patch_undivide(patches: Tensor, length: int) -> Tensor:
    """Inverse of `patch_divide`: flattens patches and drops the front padding."""
    patches = as_tensor(patches)
    count, size, features = patches.shape[-3:]
    flat = reshape(patches, patches.shape[:-3] + (count * size, features))
    pad = count * size - length
    if pad < 0 or pad >= size:
        raise DimensionError(f"{count} patches of {size} cannot cover length {length}")
    return take(flat, np.arange(pad, pad + length), axis=-2) if pad else flat


def intra_patch_attention(
    patches: Tensor, params: DualAttentionParams, with_weights: bool = False
):
    """
    Cross-attention of the learned query against each patch's time steps.

    Args:
        patches: Embedded patches [..., P, S, d_m].

    Returns:
        Attn_intra [..., P, d_m] (and the [..., P, 1, S] attention rows if requested).
    """
    patches = as_tensor(patches)
    if patches.shape[-1] != params.d_model or patches.shape[-2] != params.patch_size:
        raise DimensionError(
            f"intra attention for S={params.patch_size}, d_m={params.d_model}"
            f" got patches {patches.shape}"
        )
    keys = params.intra_key(patches)
    values = params.intra_value(patches)
    scores = _swap_last(matmul(keys, transpose(params.intra_query, (1, 0))))
    scores = scores * (1.0 / math.sqrt(params.d_model))
    attn = softmax(scores, axis=-1)
    out = matmul(attn, values)
    out = reshape(out, out.shape[:-2] + (params.d_model,))
    return (out, attn.data) if with_weights else out


def inter_patch_attention(
    x_divided: Tensor,
    params: DualAttentionParams,
    embedded: bool = False,
    with_weights: bool = False,
):
    """
    Self-attention over patch tokens of width d'_m = S * d_m.

    Args:
        x_divided: Patches [..., P, S, d]; embedded to d_m first unless `embedded`.

    Returns:
        Attn_inter [..., P, d'_m] (and the [..., h, P, P] attention rows if requested).
    """
    x_divided = as_tensor(x_divided)
    if x_divided.shape[-2] != params.patch_size:
        raise DimensionError(
            f"inter attention for S={params.patch_size} got patches {x_divided.shape}"
        )
    patches = x_divided if embedded else params.embed(x_divided)
    if patches.shape[-1] != params.d_model:
        raise DimensionError(f"inter attention expects d_m={params.d_model}, got {patches.shape}")

    lead = patches.shape[:-3]
    count = patches.shape[-3]
    width = params.patch_size * params.d_model
    heads = params.heads
    head_dim = width // heads
    tokens = reshape(patches, lead + (count, width))

    def split(t: Tensor) -> Tensor:
        t = reshape(t, lead + (count, heads, head_dim))
        n = len(lead)
        return transpose(t, tuple(range(n)) + (n + 1, n, n + 2))

    queries = split(params.inter_query(tokens))
    keys = split(params.inter_key(tokens))
    values = split(params.inter_value(tokens))
    attn = softmax(matmul(queries, _swap_last(keys)) * (1.0 / math.sqrt(head_dim)), axis=-1)
    mixed = matmul(attn, values)
    n = len(lead)
    out = reshape(transpose(mixed, tuple(range(n)) + (n + 1, n, n + 2)), lead + (count, width))
    return (out, attn.data) if with_weights else out


def dual_fuse(
    attn_intra: Optional[Tensor],
    attn_inter: Optional[Tensor],
    params: DualAttentionParams,
) -> Tensor:
    """
    Combines both attentions into [..., P, S, d_m].

    The intra output is expanded 1 -> S along a new patch-length axis with
    `params.expand`; the inter output is reshaped; the two are summed. Either
    branch may be None (ablations), but not both.
    """
    size, d_model = params.patch_size, params.d_model
    parts: List[Tensor] = []
    if attn_intra is not None:
        attn_intra = as_tensor(attn_intra)
        if attn_intra.shape[-1] != d_model:
            raise DimensionError(f"intra output {attn_intra.shape} does not end in d_m={d_model}")
        column = reshape(attn_intra, attn_intra.shape + (1,))
        parts.append(_swap_last(params.expand(column)))
    if attn_inter is not None:
        attn_inter = as_tensor(attn_inter)
        if attn_inter.shape[-1] != size * d_model:
            raise DimensionError(
                f"inter output {attn_inter.shape} does not end in S*d_m={size * d_model}"
            )
        parts.append(reshape(attn_inter, attn_inter.shape[:-1] + (size, d_model)))
    if not parts:
        raise ConfigError("dual fusion needs at least one of intra and inter attention")
    if len(parts) == 2 and parts[0].shape != parts[1].shape:
        raise DimensionError(f"cannot fuse intra {parts[0].shape} with inter {parts[1].shape}")
    return parts[0] if len(parts) == 1 else parts[0] + parts[1]


class AMSBlockParams(Module):
    """
    Everything one AMS block learns.

    Attributes:
        scales (List[ScaleSpec]): Patch geometry per pathway, in routing order.
        attention (List[DualAttentionParams]): Dual attention per scale.
        router (RouterParams): Gating over the scales.
        decomposition (DecompositionParams): Router front-end.
        align (List[Optional[TemporalAlign]]): T_i per scale (None = identity).
    """

    def __init__(
        self,
        length: int,
        in_features: int,
        patch_sizes: Sequence[int],
        config: ModelConfig,
        rng: np.random.Generator,
    ) -> None:
        if len(set(patch_sizes)) != len(patch_sizes):
            raise ConfigError(f"patch sizes of a block must be distinct, got {list(patch_sizes)}")
        self.length = length
        self.in_features = in_features
        self.config = config
        self.scales = [ScaleSpec.for_length(length, s) for s in patch_sizes]
        self.attention = [
            DualAttentionParams(
                s, in_features, config.d_model, rng,
                heads=config.heads,
                ffn_hidden=config.ffn_hidden if config.ffn else None,
            )
            for s in patch_sizes
        ]
        self.router = RouterParams(
            in_features, len(patch_sizes), config.top_k, noise_enabled=config.noise
        )
        self.decomposition = DecompositionParams(
            length, in_features, config.k_f, config.kernels, rng, keep_dc=config.keep_dc
        )
        self.align = [
            TemporalAlign(length, rng) if config.temporal_align == "linear" else None
            for _ in patch_sizes
        ]

    @property
    def patch_sizes(self) -> Tuple[int, ...]:
        return tuple(spec.patch_size for spec in self.scales)


def scale_forward(x: Tensor, index: int, params: AMSBlockParams) -> Tensor:
    """One pathway: embed, divide, dual attention, fuse, undivide, residual, align."""
    cfg = params.config
    attn = params.attention[index]
    embedded = attn.embed(x)
    patches = patch_divide(embedded, attn.patch_size)
    intra = None if cfg.no_intra else intra_patch_attention(patches, attn)
    inter = None if cfg.no_inter else inter_patch_attention(patches, attn, embedded=True)
    out = patch_undivide(dual_fuse(intra, inter, attn), params.length)
    if cfg.residual:
        out = embedded + out
    if attn.ffn is not None:
        out = out + attn.ffn(out)
    align = params.align[index]
    return align(out) if align is not None else out


def ams_forward(
    x: Tensor,
    params: AMSBlockParams,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    selections: Optional[SelectionRecord] = None,
    key: str = "block",
) -> Tuple[Tensor, BlockTrace]:
    """
    Forward pass of one AMS block.

    Args:
        x: Input [B, H, d_in] (or [H, d_in]).
        params: Block parameters.
        train_mode: Enables router noise.
        rng: Noise source.
        selections: Optional record that freezes routing and frequency choices.
        key: Prefix under which this block's selections are recorded.

    Returns:
        (output [B, H, d_m], trace). Output row b is
        sum over selected scales i of R(x_trans)_i * T_i(scale_i(x_b)).
    """
    x = as_tensor(x)
    unbatched = x.ndim == 2
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1] != params.length or x.shape[2] != params.in_features:
        raise DimensionError(
            f"AMS block expects [B, {params.length}, {params.in_features}], got {x.shape}"
        )
    cfg = params.config
    decomposition = params.decomposition

    if cfg.no_decompose:
        x_trans = merge_transform(x, None, None, decomposition.merge_map)
    else:
        def compute() -> np.ndarray:
            return frequency_mask(x.data, decomposition.k_f, decomposition.keep_dc)

        keep = selections.resolve(f"{key}.frequencies", compute) if selections else None
        x_trans = decomposition.decompose(x, keep).x_trans

    batch = x.shape[0]
    num_scales = len(params.scales)
    if cfg.no_pathways:
        every = np.ones((batch, num_scales), dtype=bool)
        pathways = route(x_trans, params.router, rng, train_mode, mask=every)
    else:
        replay = selections.masks.get(f"{key}.pathways") if selections else None
        pathways = route(x_trans, params.router, rng, train_mode, mask=replay)
        if selections is not None:
            selections.resolve(f"{key}.pathways", lambda: pathways.mask)

    out: Optional[Tensor] = None
    runs: List[int] = []
    for index in range(num_scales):
        rows = np.flatnonzero(pathways.mask[:, index])
        runs.append(int(rows.size))
        if rows.size == 0:
            continue
        whole = rows.size == batch
        subset = x if whole else take(x, rows, axis=0)
        weight = take(pathways.weights, [index], axis=-1)
        if not whole:
            weight = take(weight, rows, axis=0)
        contribution = scale_forward(subset, index, params) * reshape(weight, (rows.size, 1, 1))
        if not whole:
            contribution = scatter(contribution, rows, batch, axis=0)
        out = contribution if out is None else out + contribution

    if out is None:
        raise DimensionError("router selected no pathway")
    trace = BlockTrace(pathways=pathways, scale_runs=tuple(runs), dual_attention_runs=sum(runs))
    if unbatched:
        out = reshape(out, out.shape[1:])
    return out, trace
