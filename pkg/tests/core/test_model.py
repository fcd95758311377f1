"""
Location: tests/core/test_model.py

Description: Unit tests for the assembled network: instance normalisation,
channel independence, the predictor, ablations and parameter state.
"""

import numpy as np
import pytest

from pathformer.core.config import ModelConfig
from pathformer.core.model import (
    InstanceNorm,
    Pathformer,
    Predictor,
    apply_ablation,
    denormalize,
    instance_normalize,
)
from pathformer.core.numerics import gradients
from pathformer.utils.errors import ConfigError, ContractError, DimensionError


def toy_config(**overrides) -> ModelConfig:
    settings = dict(
        input_len=24, pred_len=8, channels=2, num_blocks=2, pool=(2, 3, 6, 8),
        scales_per_block=3, top_k=2, d_model=4, k_f=3, kernels=(2, 4),
    )
    settings.update(overrides)
    return ModelConfig(**settings)


@pytest.fixture
def windows():
    return np.random.default_rng(0).standard_normal((3, 24, 2)) * 2.0 + 5.0


def test_normalize_statistics(windows):
    """Each channel of each window ends with zero mean and unit std."""
    normed, state = instance_normalize(windows)
    np.testing.assert_allclose(normed.data.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(normed.data.std(axis=1), 1.0, atol=1e-12)
    assert state.mean.shape == (3, 1, 2)
    assert state.channels == 2


def test_normalize_constant_channel_is_zero():
    """A constant channel maps to zeros thanks to the std floor."""
    normed, state = instance_normalize(np.full((10, 1), 4.0))
    np.testing.assert_array_equal(normed.data, 0.0)
    assert state.std[0, 0] == pytest.approx(1e-5)


def test_normalize_round_trip(windows):
    """denormalize(normalize(x)) returns x, with and without the affine."""
    normed, state = instance_normalize(windows)
    np.testing.assert_allclose(denormalize(normed, state).data, windows, atol=1e-12)
    affine = InstanceNorm(2)
    affine.affine_weight.data[:] = [2.0, 0.5]
    affine.affine_bias.data[:] = [1.0, -1.0]
    normed, state = instance_normalize(windows, affine)
    np.testing.assert_allclose(denormalize(normed, state).data, windows, atol=1e-8)


def test_normalize_rejects_short_windows():
    """A single time step has no spread."""
    with pytest.raises(DimensionError):
        instance_normalize(np.ones((1, 3)))


def test_denormalize_channel_mismatch(windows):
    """Statistics for two channels cannot denormalize three."""
    _, state = instance_normalize(windows)
    with pytest.raises(DimensionError):
        denormalize(np.zeros((3, 8, 3)), state)


def test_predictor_shapes_and_value():
    """The head maps H*d_m features to F values, with or without a hidden layer."""
    rng = np.random.default_rng(1)
    head = Predictor(6, 3, rng)
    h = rng.standard_normal((4, 6))
    expected = h @ head.output.weight.data + head.output.bias.data
    np.testing.assert_allclose(head(h).data, expected, atol=1e-12)
    assert Predictor(6, 3, rng, hidden=5)(h).shape == (4, 3)
    with pytest.raises(DimensionError):
        head(np.zeros((4, 5)))


def test_forward_shapes(windows):
    """(N, H, C) gives (N, F, C); a single window gives (F, C)."""
    model = Pathformer(toy_config(), seed=1)
    forecast = model(windows)
    assert forecast.values.shape == (3, 8, 2)
    assert model(windows[0]).values.shape == (8, 2)
    assert len(forecast.block_traces) == 2
    assert forecast.pathway_trace[0].mask.shape == (3, 2, 3)
    assert forecast.dual_attention_runs == 2 * 2 * 3 * 2


def test_forward_rejects_wrong_window(windows):
    """Windows of the wrong length or channel count break the contract."""
    model = Pathformer(toy_config(), seed=1)
    with pytest.raises(ContractError):
        model(windows[:, :20, :])
    with pytest.raises(ContractError):
        model(np.zeros((24, 3)))


def test_same_seed_same_forecast(windows):
    """Construction and evaluation are deterministic in the seed."""
    first = Pathformer(toy_config(), seed=5)(windows).values
    second = Pathformer(toy_config(), seed=5)(windows).values
    assert np.array_equal(first, second)
    assert not np.allclose(first, Pathformer(toy_config(), seed=6)(windows).values)


def test_channel_permutation_equivariance(windows):
    """Swapping input channels swaps the forecast channels."""
    model = Pathformer(toy_config(), seed=2)
    forecast = model(windows).values
    swapped = model(windows[..., ::-1]).values
    np.testing.assert_allclose(swapped, forecast[..., ::-1], atol=1e-12)


def test_shift_and_scale_covariance(windows):
    """Adding a constant shifts the forecast; scaling scales it."""
    model = Pathformer(toy_config(), seed=3)
    base = model(windows).values
    np.testing.assert_allclose(model(windows + 100.0).values, base + 100.0, atol=1e-6)
    np.testing.assert_allclose(model(windows * 3.0).values, base * 3.0, atol=1e-6)


def test_parameter_names(windows):
    """Parameters are named by their position in the network."""
    model = Pathformer(toy_config(revin_affine=True), seed=0)
    names = model.parameters()
    assert "blocks.0.router.w_router" in names
    assert "blocks.1.attention.2.inter_query.weight" in names
    assert "predictor.output.weight" in names
    assert names["norm.affine_weight"].shape == (2,)
    assert model.parameter_count() == sum(t.size for t in names.values())
    assert model.blocks[1].decomposition.kernel_weight_map.weight.shape == (24 * 4, 2)


def test_first_block_sees_one_feature():
    """Channel independence feeds single-feature rows into the first block."""
    model = Pathformer(toy_config(), seed=0)
    assert model.blocks[0].in_features == 1
    assert model.blocks[1].in_features == 4


def test_gradients_reach_affine(windows):
    """The optional affine is trained through the denormalisation."""
    model = Pathformer(toy_config(revin_affine=True), seed=4)
    params = model.parameters()
    grads = gradients(model(windows).prediction.sum(), params)
    assert set(grads) == set(params)
    assert np.all(grads["norm.affine_weight"] != 0.0)
    assert np.any(grads["predictor.output.weight"] != 0.0)


def test_optional_sublayers_train(windows):
    """Feed-forward, temporal alignment, hidden predictor and heads join the graph."""
    config = toy_config(
        ffn=True, ffn_hidden=6, temporal_align="linear", predictor_hidden=5, heads=2
    )
    model = Pathformer(config, seed=2)
    params = model.parameters()
    forecast = model(windows)
    assert forecast.prediction.shape == (3, 8, 2)
    grads = gradients(forecast.prediction.sum(), params)
    for prefix in ("blocks.0.attention.0.ffn.", "blocks.0.align.0.", "predictor.hidden."):
        touched = [n for n in params if n.startswith(prefix)]
        assert touched, prefix
        assert any(np.any(grads[n] != 0.0) for n in touched), prefix
    assert model.blocks[0].align[2] is not None


def test_balance_loss_closed_form(windows):
    """Fresh routers over three scales keeping two give a penalty of 0.5 per block."""
    model = Pathformer(toy_config(balance_coef=0.1), seed=0)
    assert model(windows).balance_loss.item() == pytest.approx(0.1, rel=1e-8)
    assert Pathformer(toy_config(), seed=0)(windows).balance_loss is None


def test_load_state_reports_problems():
    """Mismatched states raise a ContractError naming the keys."""
    model = Pathformer(toy_config(), seed=0)
    state = model.state()
    state.pop("predictor.output.bias")
    state["blocks.0.router.w_router"] = np.zeros((5, 5))
    state["extra"] = np.zeros(1)
    with pytest.raises(ContractError) as excinfo:
        model.load_state(state)
    message = str(excinfo.value)
    assert "missing predictor.output.bias" in message
    assert "unexpected extra" in message
    assert "blocks.0.router.w_router" in message


def test_copy_is_independent(windows):
    """A copy forecasts identically and does not share storage."""
    model = Pathformer(toy_config(), seed=7)
    clone = model.copy()
    assert np.array_equal(clone(windows).values, model(windows).values)
    clone.predictor.output.bias.data += 1.0
    assert not np.allclose(clone(windows).values, model(windows).values)


def test_rebuild_for_channels_keeps_shared_weights():
    """A three-channel rebuild shares every parameter except the affine."""
    model = Pathformer(toy_config(revin_affine=True), seed=8)
    model.norm.affine_weight.data[:] = 3.0
    rebuilt = model.rebuild_for_channels(3)
    assert rebuilt.config.channels == 3
    np.testing.assert_array_equal(rebuilt.norm.affine_weight.data, np.ones(3))
    before, after = model.state(), rebuilt.state()
    for name, values in before.items():
        if not name.startswith("norm."):
            np.testing.assert_array_equal(after[name], values)
    assert rebuilt(np.random.default_rng(0).standard_normal((24, 3))).values.shape == (8, 3)


def test_no_decompose_ignores_kernel_weights(windows):
    """Without decomposition the trend weighting has no effect on the output."""
    model = Pathformer(toy_config(no_decompose=True), seed=9)
    base = model(windows).values
    for block in model.blocks:
        block.decomposition.kernel_weight_map.weight.data[:] = 10.0
    np.testing.assert_array_equal(model(windows).values, base)


def test_apply_ablation():
    """Ablation flags resolve to the architecture that will run."""
    config = toy_config()
    full = apply_ablation(config)
    assert full.describe() == "intra+inter+decompose+pathways"
    assert full.scales_computed == 2
    dense = apply_ablation(config, ["no_pathways", "no_intra"])
    assert dense.scales_computed == 3
    assert dense.describe() == "inter+decompose"
    with pytest.raises(ConfigError):
        apply_ablation(config, ["no_inter", "no_intra"])
    with pytest.raises(ConfigError):
        apply_ablation(config, ["no_router"])


@pytest.mark.parametrize("ablation", ["no_inter", "no_intra", "no_decompose", "no_pathways"])
def test_ablated_models_forecast(windows, ablation):
    """Every single ablation still produces a finite forecast of the right shape."""
    model = Pathformer(toy_config().with_ablations([ablation]), seed=0)
    forecast = model(windows)
    assert forecast.values.shape == (3, 8, 2)
    assert np.all(np.isfinite(forecast.values))
