"""
Location: src/pathformer/core/selfcheck.py

Description: Invariant Suite behind `pathformer selfcheck`.

Runs the numerical properties the engine depends on against a small toy
configuration:

1. **gradients**: every parameter gradient of the full model against central
   finite differences, with routing and frequency selections frozen.
2. **fourier**: seasonality extraction and spectrum round trips against a naive DFT.
3. **routing**: top-K sparsity, softmax normalisation and determinism over random routings.
4. **shapes**: block output shapes and dual-attention counts over the patch-size pool.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from pathformer.core.config import DEFAULT_POOL, ModelConfig
from pathformer.core.decomposition import seasonality_decompose
from pathformer.core.model import Pathformer
from pathformer.core.mst_block import (
    AMSBlockParams,
    SelectionRecord,
    ams_forward,
    patch_divide,
    patch_undivide,
)
from pathformer.core.numerics import gradients, irdft, no_grad, rdft, sum_
from pathformer.core.router import RouterParams, route

GRADIENT_TOY = ModelConfig(
    input_len=24,
    pred_len=8,
    channels=2,
    num_blocks=2,
    pool=(2, 3, 6),
    scales_per_block=3,
    top_k=2,
    d_model=4,
    k_f=3,
    kernels=(2, 4),
)
SHAPE_LENGTHS: Tuple[int, ...] = (36, 48, 96, 192, 336)


@dataclass(frozen=True)
class SelfcheckSettings:
    """Tolerances and sizes, overridable from `[tool.pathformer.selfcheck]`."""

    seeds: int = 10
    step: float = 1e-4
    rtol: float = 1e-4
    atol: float = 1e-8
    samples_per_tensor: Optional[int] = None  # None or 0: every entry
    routings: int = 1000

    @classmethod
    def from_project(cls, settings: Mapping[str, Any]) -> SelfcheckSettings:
        known = {k: v for k, v in settings.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    max_error: float = 0.0
    seconds: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class GradientCheck:
    """Outcome of one finite-difference sweep."""

    checked: int
    failures: List[str]
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return not self.failures


def _close(analytic: float, numeric: float, rtol: float, atol: float) -> Tuple[bool, float]:
    diff = abs(analytic - numeric)
    rel = diff / (abs(numeric) + 1e-8)
    return rel < rtol or diff < atol, rel


def _entries(size: int, samples: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if not samples or samples >= size:
        return np.arange(size)
    return rng.choice(size, size=samples, replace=False)


def finite_difference_check(
    model: Pathformer,
    inputs: np.ndarray,
    seed: int,
    settings: SelfcheckSettings = SelfcheckSettings(),
    names: Optional[List[str]] = None,
    noise_seed: Optional[int] = None,
) -> GradientCheck:
    """
    Compares reverse-mode gradients with central differences on a random
    linear functional of the forecast.

    Routing masks and frequency selections are recorded on the first forward
    and replayed for every perturbed evaluation, so the loss is smooth in the
    parameters. Without `noise_seed` the model runs in evaluation mode. With
    it, every forward runs in training mode on a fresh generator seeded with
    `noise_seed`, so all evaluations see the same router noise.
    """
    rng = np.random.default_rng(seed)
    selections = SelectionRecord()
    train_mode = noise_seed is not None

    def run(inputs_: np.ndarray):
        noise = np.random.default_rng(noise_seed) if train_mode else None
        return model.forward(inputs_, train_mode=train_mode, rng=noise, selections=selections)

    direction = rng.standard_normal(run(inputs).values.shape)

    def loss_value() -> float:
        with no_grad():
            return float(np.sum(run(inputs).values * direction))

    params = model.parameters()
    names = list(params) if names is None else names
    loss = sum_(run(inputs).prediction * direction)
    analytic = gradients(loss, {n: params[n] for n in names})

    failures: List[str] = []
    worst = 0.0
    checked = 0
    for name in names:
        flat = params[name].data.reshape(-1)
        for index in _entries(flat.size, settings.samples_per_tensor, rng):
            original = flat[index]
            flat[index] = original + settings.step
            plus = loss_value()
            flat[index] = original - settings.step
            minus = loss_value()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * settings.step)
            value = float(analytic[name].reshape(-1)[index])
            ok, rel = _close(value, numeric, settings.rtol, settings.atol)
            checked += 1
            if not ok:
                worst = max(worst, rel)
                failures.append(f"{name}[{index}]: analytic {value:.6e} vs numeric {numeric:.6e}")
            elif abs(value - numeric) >= settings.atol:
                worst = max(worst, rel)
    return GradientCheck(checked=checked, failures=failures, max_rel_error=worst)


def check_gradients(settings: SelfcheckSettings) -> CheckResult:
    """Odd seeds run with training noise so the W_noise path is covered."""
    worst = 0.0
    total = 0
    for seed in range(settings.seeds):
        model = Pathformer(GRADIENT_TOY, seed=seed)
        inputs = np.random.default_rng(1000 + seed).standard_normal(
            (2, GRADIENT_TOY.input_len, GRADIENT_TOY.channels)
        )
        noise_seed = 2000 + seed if seed % 2 else None
        result = finite_difference_check(model, inputs, seed, settings, noise_seed=noise_seed)
        total += result.checked
        worst = max(worst, result.max_rel_error)
        if not result.passed:
            return CheckResult("gradients", False, f"seed {seed}: {result.failures[0]}", worst)
    return CheckResult("gradients", True, f"{total} entries over {settings.seeds} seeds", worst)


def naive_dft(series: np.ndarray) -> np.ndarray:
    """O(H^2) DFT of a real series, first H//2 + 1 bins."""
    length = series.shape[0]
    t = np.arange(length)
    k = np.arange(length // 2 + 1)[:, None]
    return (series[None, :] * np.exp(-2j * np.pi * k * t / length)).sum(axis=1)


def check_fourier(settings: SelfcheckSettings) -> CheckResult:
    t = np.arange(96, dtype=np.float64)
    wave = np.sin(2.0 * np.pi * t / 24.0)
    x_sea, _ = seasonality_decompose(wave.reshape(96, 1), k_f=1)
    sinusoid_error = float(np.max(np.abs(x_sea.data[:, 0] - wave)))

    rng = np.random.default_rng(0)
    series = rng.standard_normal(16)
    amplitudes, phases = rdft(series)
    reference = naive_dft(series)
    spectrum_error = float(np.max(np.abs(amplitudes * np.exp(1j * phases) - reference)))
    round_trip = float(np.max(np.abs(irdft(amplitudes, phases, 16) - series)))

    passed = sinusoid_error < 1e-6 and spectrum_error < 1e-9 and round_trip < 1e-9
    detail = (
        f"sinusoid {sinusoid_error:.1e}, spectrum {spectrum_error:.1e},"
        f" round trip {round_trip:.1e}"
    )
    return CheckResult("fourier", passed, detail, max(sinusoid_error, spectrum_error, round_trip))


def check_routing(settings: SelfcheckSettings) -> CheckResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(settings.routings):
        features = int(rng.integers(1, 9))
        scales = int(rng.integers(1, 8))
        top_k = int(rng.integers(1, scales + 1))
        router = RouterParams(features, scales, top_k)
        router.w_router.data[...] = rng.standard_normal((features, scales))
        router.w_noise.data[...] = rng.standard_normal((features, scales))
        x_trans = rng.standard_normal((3, features))
        first = route(x_trans, router)
        second = route(x_trans, router)
        worst = max(worst, float(np.max(np.abs(first.dense.sum(axis=-1) - 1.0))))
        if not np.all(first.mask.sum(axis=-1) == top_k):
            return CheckResult(
                "routing", False, f"trial {trial}: mask does not hold exactly {top_k} entries",
            )
        same_dense = np.array_equal(first.dense, second.dense)
        if not (same_dense and np.array_equal(first.mask, second.mask)):
            return CheckResult(
                "routing", False, f"trial {trial}: noise-off routing is not deterministic",
            )
        if worst > 1e-9:
            return CheckResult(
                "routing", False, f"trial {trial}: weights sum off by {worst:.1e}", worst,
            )

    symmetric = route(rng.standard_normal((4, 5)), RouterParams(5, 4, 2))
    if not np.allclose(symmetric.dense, 0.25, atol=1e-12):
        return CheckResult("routing", False, "zero router weights do not give uniform pathways")
    return CheckResult("routing", True, f"{settings.routings} random routings", worst)


def check_shapes(settings: SelfcheckSettings) -> CheckResult:
    rng = np.random.default_rng(3)
    runs = 0
    for length in SHAPE_LENGTHS:
        config = ModelConfig(input_len=length, d_model=4, k_f=3)
        for size in DEFAULT_POOL:
            x = rng.standard_normal((length, 4))
            restored = patch_undivide(patch_divide(x, size), length)
            if not np.array_equal(restored.data, x):
                return CheckResult(
                    "shapes", False, f"H={length}, S={size}: divide/undivide is not exact",
                )
        for block_index in range(config.num_blocks):
            block = AMSBlockParams(length, 1, config.patch_sizes_for(block_index), config, rng)
            with no_grad():
                out, trace = ams_forward(rng.standard_normal((2, length, 1)), block)
            runs += 1
            if out.shape != (2, length, config.d_model):
                return CheckResult("shapes", False, f"H={length}: block output {out.shape}")
            if trace.dual_attention_runs != 2 * config.top_k:
                return CheckResult(
                    "shapes", False,
                    f"H={length}: {trace.dual_attention_runs} dual attentions"
                    f" for 2 rows, K={config.top_k}",
                )
    return CheckResult("shapes", True, f"{runs} block forwards over H in {list(SHAPE_LENGTHS)}")


CHECKS: Dict[str, Callable[[SelfcheckSettings], CheckResult]] = {
    "fourier": check_fourier,
    "routing": check_routing,
    "shapes": check_shapes,
    "gradients": check_gradients,
}


def run_selfcheck(
    settings: SelfcheckSettings = SelfcheckSettings(),
    only: Optional[List[str]] = None,
) -> List[CheckResult]:
    """Runs the selected checks (all by default) and times each."""
    results = []
    for name, check in CHECKS.items():
        if only and name not in only:
            continue
        started = time.perf_counter()
        result = check(settings)
        results.append(CheckResult(result.name, result.passed, result.detail, result.max_error,
                                   time.perf_counter() - started))
    return results
