"""
Location: tests/core/test_selfcheck.py

Description: Unit tests for the invariant suite behind `pathformer selfcheck`.
"""

import dataclasses

import numpy as np
import pytest

from pathformer.core.model import Pathformer
from pathformer.core.numerics import gradients
from pathformer.core.selfcheck import (
    GRADIENT_TOY,
    SelfcheckSettings,
    _close,
    check_fourier,
    check_gradients,
    check_routing,
    check_shapes,
    finite_difference_check,
    naive_dft,
    run_selfcheck,
)


def test_settings_from_project_ignore_unknown_keys():
    """Only known fields are taken from the TOML table."""
    settings = SelfcheckSettings.from_project({"seeds": 2, "colour": "blue"})
    assert settings.seeds == 2
    assert settings.rtol == 1e-4


def test_comparator_accepts_relative_or_absolute_agreement():
    """Entries pass on a small relative error or a tiny absolute one."""
    assert _close(1.0, 1.00001, 1e-4, 1e-8)[0]
    assert _close(1e-12, 3e-12, 1e-4, 1e-8)[0]
    assert not _close(1.0, 1.01, 1e-4, 1e-8)[0]


def test_naive_dft_matches_numpy():
    """The O(H^2) reference agrees with the FFT."""
    series = np.random.default_rng(0).standard_normal(12)
    np.testing.assert_allclose(naive_dft(series), np.fft.rfft(series), atol=1e-9)


def test_fourier_check_passes():
    """Seasonality extraction and spectra are exact on the reference signals."""
    result = check_fourier(SelfcheckSettings())
    assert result.passed, result.detail


def test_routing_check_passes():
    """Random routings keep exactly K pathways with normalised weights."""
    result = check_routing(SelfcheckSettings(routings=100))
    assert result.passed, result.detail


def test_shape_check_passes():
    """Blocks over every benchmark length keep their shapes and run counts."""
    result = check_shapes(SelfcheckSettings())
    assert result.passed, result.detail


def test_finite_differences_single_seed():
    """One seed of the gradient sweep agrees with reverse mode on every entry."""
    model = Pathformer(GRADIENT_TOY, seed=0)
    inputs = np.random.default_rng(1000).standard_normal(
        (2, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
    )
    names = [
        "blocks.0.router.w_router",
        "blocks.1.decomposition.merge_map.weight",
        "predictor.output.bias",
    ]
    result = finite_difference_check(model, inputs, seed=0, names=names)
    assert result.passed, result.failures[:3]
    params = model.parameters()
    assert result.checked == sum(params[n].data.size for n in names)


def test_finite_differences_sample_subset():
    """A sample size bounds the entries checked per tensor."""
    model = Pathformer(GRADIENT_TOY, seed=0)
    inputs = np.random.default_rng(1000).standard_normal(
        (2, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
    )
    settings = SelfcheckSettings(samples_per_tensor=1)
    result = finite_difference_check(model, inputs, seed=0, settings=settings)
    assert result.passed, result.failures[:3]
    assert result.checked == len(model.parameters())


def test_noise_gradients_match_finite_differences():
    """In training mode the softplus noise path reaches W_noise and matches central differences."""
    model = Pathformer(GRADIENT_TOY, seed=3)
    inputs = np.random.default_rng(1003).standard_normal(
        (2, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
    )
    params = model.parameters()
    names = [n for n in params if ".router." in n]
    assert {n for n in names if n.endswith("w_noise")} == {
        "blocks.0.router.w_noise", "blocks.1.router.w_noise",
    }

    forecast = model.forward(inputs, train_mode=True, rng=np.random.default_rng(5))
    grads = gradients(forecast.prediction.sum(), params)
    assert np.any(grads["blocks.1.router.w_noise"] != 0.0)

    result = finite_difference_check(model, inputs, seed=3, names=names, noise_seed=5)
    assert result.passed, result.failures[:3]
    assert result.checked == sum(params[n].data.size for n in names)


def test_finite_differences_detect_a_wrong_gradient(monkeypatch):
    """A corrupted backward pass is reported as a failure."""
    from pathformer.core import selfcheck

    real = selfcheck.gradients

    def corrupted(loss, params):
        grads = real(loss, params)
        return {name: g * 2.0 + 1.0 for name, g in grads.items()}

    monkeypatch.setattr(selfcheck, "gradients", corrupted)
    model = Pathformer(GRADIENT_TOY, seed=1)
    inputs = np.random.default_rng(1).standard_normal(
        (1, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
    )
    names = ["predictor.output.bias"]
    result = finite_difference_check(model, inputs, seed=1, names=names)
    assert not result.passed
    assert result.failures[0].startswith("predictor.output.bias[")


def test_run_selfcheck_filters_and_times():
    """Selected checks run in order and carry their duration."""
    results = run_selfcheck(SelfcheckSettings(routings=10), only=["fourier", "routing"])
    assert [r.name for r in results] == ["fourier", "routing"]
    assert all(r.passed and r.seconds >= 0.0 for r in results)


@pytest.mark.slow
def test_gradient_check_all_seeds():
    """The full ten-seed gradient sweep passes."""
    result = check_gradients(dataclasses.replace(SelfcheckSettings(), seeds=10))
    assert result.passed, result.detail


@pytest.mark.slow
def test_every_entry_in_training_mode():
    """A full sweep with replayed router noise covers every parameter entry."""
    model = Pathformer(GRADIENT_TOY, seed=1)
    inputs = np.random.default_rng(1001).standard_normal(
        (2, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
    )
    result = finite_difference_check(model, inputs, seed=1, noise_seed=2001)
    assert result.passed, result.failures[:3]
    assert result.checked == sum(t.data.size for t in model.parameters().values())
