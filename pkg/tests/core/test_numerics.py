"""
Location: tests/core/test_numerics.py

Description: Unit tests for the tensor engine.

Covers the forward values of every operation against direct oracles, the
reverse-mode gradients against central finite differences, and the graph
bookkeeping (topological order, zero gradients, no_grad).
"""

import numpy as np
import pytest

from pathformer.core.numerics import (
    Graph,
    Tensor,
    abs_,
    avg_pool_same,
    backward,
    div,
    fourier_project,
    gradients,
    irdft,
    linear,
    matmul,
    no_grad,
    parameter,
    rdft,
    relu,
    scatter,
    softmax,
    softplus,
    sum_,
    take,
    transpose,
)
from pathformer.utils.errors import ConfigError, ContractError, DimensionError


def numeric_gradient(fn, x, step=1e-6):
    """Central differences of a scalar function of one array."""
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn(x)
        flat[i] = original - step
        minus = fn(x)
        flat[i] = original
        out[i] = (plus - minus) / (2 * step)
    return grad


def check_op(op, shape, seed=0):
    """Compares the gradient of sum(op(x) * w) with central differences."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(shape)
    x = parameter(values.copy())
    weight = rng.standard_normal(op(Tensor(values)).shape)
    analytic = gradients(sum_(op(x) * weight), {"x": x})["x"]
    numeric = numeric_gradient(lambda v: float(np.sum(op(Tensor(v)).data * weight)), values.copy())
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_matmul_identity():
    """Multiplying by the identity returns the other operand."""
    b = np.array([[1.5, -2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), b).data, b)


def test_matmul_hand_arithmetic():
    """[[1,2]] x [[3],[4]] is [[11]]."""
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_triple_loop_oracle():
    """A random 3x4 by 4x2 product matches an explicit triple loop."""
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b).data, expected, atol=1e-12)


def test_matmul_mismatch_names_shapes():
    """Inner extent mismatch raises a DimensionError naming both shapes."""
    with pytest.raises(DimensionError, match=r"\(2, 3\) x \(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_symmetric():
    """Equal logits give equal weights."""
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_large_logits_do_not_overflow():
    """[1000, 0] evaluates without overflow."""
    out = softmax([1000.0, 0.0]).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0)
    assert out[1] < 1e-300


def test_softmax_matches_formula_and_shift():
    """Values match exp(x)/sum(exp(x)) and are invariant to a constant shift."""
    x = np.array([1.0, 2.0, 3.0])
    expected = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(x).data, expected, atol=1e-12)
    np.testing.assert_allclose(softmax(x + 50.0).data, expected, atol=1e-9)


def test_softmax_rows_sum_to_one():
    """Every slice along the chosen axis sums to one."""
    x = np.random.default_rng(2).standard_normal((4, 5, 6))
    assert np.allclose(softmax(x, axis=1).data.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_empty_axis_raises():
    """An empty axis is rejected."""
    with pytest.raises(DimensionError):
        softmax(np.zeros((2, 0)), axis=1)


def test_linear_identity_and_hand_case():
    """Identity weights pass input through; x=[1,1], W=[[2],[3]], b=[1] gives [6]."""
    x = np.array([[0.5, -1.0]])
    assert np.array_equal(linear(x, np.eye(2), np.zeros(2)).data, x)
    assert linear([1.0, 1.0], [[2.0], [3.0]], [1.0]).data.tolist() == [6.0]


def test_linear_matches_composition():
    """A random affine map equals matmul plus broadcast bias."""
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((2, 5, 3)), rng.standard_normal((3, 4)), rng.standard_normal(4)
    np.testing.assert_allclose(linear(x, w, b).data, x @ w + b, atol=1e-12)


def test_linear_mismatch_raises():
    """Wrong input width raises a DimensionError."""
    with pytest.raises(DimensionError):
        linear(np.ones((2, 3)), np.ones((4, 2)))


def test_backward_sum_gives_ones():
    """The gradient of sum(x) is all ones."""
    x = parameter(np.random.default_rng(4).standard_normal((3, 2)))
    assert np.array_equal(gradients(sum_(x), {"x": x})["x"], np.ones((3, 2)))


def test_backward_square_scalar():
    """d(x*x)/dx at x=3 is 6."""
    x = parameter(np.array(3.0))
    assert gradients(x * x, {"x": x})["x"] == pytest.approx(6.0)


def test_backward_unreached_parameter_is_zero():
    """A parameter the loss does not use gets exact zeros."""
    x, unused = parameter(np.ones(3)), parameter(np.ones((2, 2)))
    grads = gradients(sum_(x), {"x": x, "unused": unused})
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))


def test_backward_non_scalar_loss_raises():
    """Backward on a vector is a contract violation."""
    x = parameter(np.ones(3))
    loss = x * 2.0
    with pytest.raises(ContractError):
        backward(Graph.trace(loss, {"x": x}), loss)


def test_graph_is_topologically_ordered():
    """Each node's inputs precede it in the traced graph."""
    x = parameter(np.ones((2, 2)))
    y = matmul(x, x) + x
    loss = sum_(softmax(y, axis=-1) * y)
    graph = Graph.trace(loss, {"x": x})
    for position, node in enumerate(graph.nodes):
        assert all(i < position for i in node.inputs)
    assert graph.nodes[-1].output is loss


def test_no_grad_skips_recording():
    """Operations inside no_grad produce constants."""
    x = parameter(np.ones(2))
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad
    assert (x * 3.0).requires_grad


def test_avg_pool_kernel_one_is_identity():
    """A kernel of one leaves the series unchanged."""
    x = np.random.default_rng(5).standard_normal((7, 2))
    np.testing.assert_allclose(avg_pool_same(x, 1).data, x, atol=1e-15)


def test_avg_pool_constant_series():
    """Any kernel maps a constant series to itself."""
    np.testing.assert_allclose(avg_pool_same(np.full((9, 1), 2.5), 4).data, 2.5, atol=1e-12)


def test_avg_pool_replicated_edges():
    """[1,2,3,4] with kernel 3 matches a per-index loop with clamped indices."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    expected = [np.mean([x[min(max(j, 0), 3)] for j in range(t - 1, t + 2)]) for t in range(4)]
    np.testing.assert_allclose(avg_pool_same(x.reshape(4, 1), 3).data[:, 0], expected, atol=1e-12)


def test_avg_pool_invalid_kernel():
    """Kernel zero is a configuration error."""
    with pytest.raises(ConfigError):
        avg_pool_same(np.ones((4, 1)), 0)


def test_rdft_constant_series():
    """A constant c of length H has A[0] = c*H and no other energy."""
    amplitudes, _ = rdft(np.full(8, 2.0))
    assert amplitudes[0] == pytest.approx(16.0)
    np.testing.assert_allclose(amplitudes[1:], 0.0, atol=1e-12)


def test_rdft_single_frequency():
    """sin(2*pi*t/8) has a single non-DC amplitude at index 1."""
    amplitudes, _ = rdft(np.sin(2 * np.pi * np.arange(8) / 8))
    assert amplitudes[1] == pytest.approx(4.0)
    assert np.all(np.delete(amplitudes, 1) < 1e-12)


def test_rdft_matches_naive_dft_and_round_trips():
    """Amplitudes and phases match an O(H^2) sum; all bins reconstruct the input."""
    x = np.random.default_rng(6).standard_normal(16)
    t = np.arange(16)
    naive = np.array([np.sum(x * np.exp(-2j * np.pi * k * t / 16)) for k in range(9)])
    amplitudes, phases = rdft(x)
    np.testing.assert_allclose(amplitudes * np.exp(1j * phases), naive, atol=1e-9)
    np.testing.assert_allclose(irdft(amplitudes, phases, 16), x, atol=1e-9)


def test_rdft_too_short():
    """A single sample is rejected."""
    with pytest.raises(ConfigError):
        rdft(np.ones(1))


@pytest.mark.parametrize(
    "op, shape",
    [
        (lambda x: softmax(x, axis=-1), (3, 4)),
        (softplus, (5,)),
        (relu, (6,)),
        (abs_, (6,)),
        (lambda x: div(x, x * x + 2.0), (4,)),
        (lambda x: avg_pool_same(x, 4), (8, 2)),
        (lambda x: matmul(x, transpose(x, (1, 0))), (3, 2)),
        (lambda x: take(x, [2, 0, 2], axis=0), (3, 2)),
        (lambda x: scatter(x, [3, 0], 5, axis=1), (2, 2)),
        (lambda x: fourier_project(x, np.array([[True], [False], [True], [True], [False]])),
         (8, 1)),
    ],
)
def test_operation_gradients(op, shape):
    """Reverse-mode gradients match central finite differences."""
    check_op(op, shape)


def test_outputs_finite_on_finite_inputs():
    """Composed operations stay finite for large but finite inputs."""
    x = Tensor(np.array([[700.0, -700.0, 0.0]]))
    out = softplus(x) + softmax(x * 10.0)
    assert np.all(np.isfinite(out.data))
