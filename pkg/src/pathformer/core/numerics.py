"""
Location: src/pathformer/core/numerics.py

Description: Dense Tensor Numerics for Pathformer.

This module provides the minimal tensor engine the model is written against:

1. **Tensor**: a float64 array that remembers which operation produced it.
2. **Graph**: a topologically ordered record of the operations behind a loss.
3. **backward**: reverse-mode differentiation over a Graph, returning one
   gradient per named parameter.
4. **Operations**: matmul, linear, softmax, softplus, pooling, Fourier
   projection, gathers/scatters and the elementwise algebra they need.

All arrays are double precision. The DFT convention is numpy's: unnormalized
forward transform, 1/H on the inverse.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from pathformer.utils.errors import ConfigError, ContractError, DimensionError

DTYPE = np.float64

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Axis = Optional[Union[int, Tuple[int, ...]]]

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "pathformer_grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disables graph recording inside the block (evaluation and inference)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    """Returns True when new operations record their backward functions."""
    return _GRAD_ENABLED.get()


class Tensor:
    """
    A dense float64 array plus the bookkeeping reverse-mode needs.

    Attributes:
        data (np.ndarray): Values in row-major order.
        requires_grad (bool): Whether gradients flow into this tensor.
        op (str): Name of the producing operation ("leaf" for inputs/parameters).
        parents (Tuple[Tensor, ...]): Inputs of the producing operation.
        name (Optional[str]): Parameter name, when the tensor is a parameter.
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "_backward", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        *,
        copy: bool = True,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=DTYPE) if copy else np.asarray(data, dtype=DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.name = name

    # -- introspection -------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Returns the underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{grad})"

    # -- operator sugar ------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes if axes else None)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wraps arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, copy=False)


def parameter(values: np.ndarray, name: Optional[str] = None) -> Tensor:
    """Creates a trainable leaf tensor."""
    return Tensor(values, requires_grad=True, name=name)


def _result(
    data: np.ndarray, parents: Tuple[Tensor, ...], op: str, backward_fn: BackwardFn
) -> Tensor:
    out = Tensor(data, copy=False)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- graph and reverse mode ------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """One recorded operation: its kind, the positions of its inputs, and its output."""

    op: str
    inputs: Tuple[int, ...]
    output: Tensor


@dataclass
class Graph:
    """
    Operations reachable from a loss, in topological order.

    Attributes:
        nodes (List[Node]): Every node's inputs precede it.
        parameters (Dict[str, Tensor]): Named leaves gradients are reported for.
    """

    nodes: List[Node] = field(default_factory=list)
    parameters: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def trace(cls, loss: Tensor, parameters: Optional[Mapping[str, Tensor]] = None) -> Graph:
        """Walks the producers of `loss` and orders them so inputs come first."""
        order: List[Tensor] = []
        position: Dict[int, int] = {}
        stack: List[Tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            tensor, expanded = stack.pop()
            key = id(tensor)
            if key in position:
                continue
            if expanded:
                position[key] = len(order)
                order.append(tensor)
                continue
            stack.append((tensor, True))
            for parent in tensor.parents:
                if id(parent) not in position:
                    stack.append((parent, False))
        nodes = [
            Node(t.op, tuple(position[id(p)] for p in t.parents), t)
            for t in order
        ]
        return cls(nodes=nodes, parameters=dict(parameters or {}))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(graph: Graph, loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Reverse-mode differentiation of a scalar loss.

    Args:
        graph: The traced graph of `loss`.
        loss: A single-element tensor.

    Returns:
        A gradient array for every parameter in `graph.parameters`; parameters
        the loss does not depend on get exact zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        out = node.output
        if out._backward is None:
            continue
        upstream = grads.pop(id(out), None)
        if upstream is None:
            continue
        for parent, grad in zip(out.parents, out._backward(upstream)):
            if grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + grad if key in grads else grad

    return {
        name: np.array(grads.get(id(tensor), np.zeros_like(tensor.data)), dtype=DTYPE)
        for name, tensor in graph.parameters.items()
    }


def gradients(loss: Tensor, parameters: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """Traces and differentiates in one call."""
    return backward(Graph.trace(loss, parameters), loss)


# -- elementwise algebra ---------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        "sub",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), "mul", backward_fn)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data / b.data, (a, b), "div", backward_fn)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def abs_(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0.0), (a,), "relu", lambda g: (g * (a.data > 0),))


def softplus(a: ArrayLike) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    # d/da softplus(a) = sigmoid(a) = exp(-softplus(-a))
    return _result(
        np.logaddexp(0.0, a.data),
        (a,),
        "softplus",
        lambda g: (g * np.exp(-np.logaddexp(0.0, -a.data)),),
    )


# -- shape manipulation ----------------------------------------------------------------


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _result(data, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(perm))
    return _result(
        np.transpose(a.data, perm), (a,), "transpose", lambda g: (np.transpose(g, inverse),)
    )


def sum_(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * a.ndim)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", backward_fn)


def mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def take(a: ArrayLike, indices: Union[Sequence[int], np.ndarray], axis: int = 0) -> Tensor:
    """Gathers slices along `axis`; repeated indices accumulate their gradients."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(a.data, idx, axis=axis), (a,), "take", backward_fn)


def scatter(
    a: ArrayLike, indices: Union[Sequence[int], np.ndarray], size: int, axis: int = 0
) -> Tensor:
    """Places slices of `a` at `indices` of a zero tensor with `size` entries along `axis`."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    if idx.shape[0] != a.shape[axis]:
        raise DimensionError(
            f"scatter of {a.shape} needs {a.shape[axis]} indices, got {idx.shape[0]}"
        )
    shape = list(a.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(a.data, axis, 0))
    return _result(out, (a,), "scatter", lambda g: (np.take(g, idx, axis=axis),))


# -- linear algebra --------------------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product over the last two axes, broadcasting leading axes.

    Raises:
        DimensionError: If the inner extents differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), "matmul", backward_fn)


def linear(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """
    Affine map over the last axis: x @ W + b.

    Args:
        x: Tensor of shape [*, in].
        weight: Tensor of shape [in, out].
        bias: Optional tensor of shape [out].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: input {x.shape} with weight {weight.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear bias {bias.shape} does not match weight {weight.shape}")
        out = add(out, bias)
    if squeeze:
        out = reshape(out, (weight.shape[1],))
    return out


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """
    Numerically stable softmax; the per-slice maximum is subtracted first.

    Raises:
        DimensionError: If `axis` is out of range or has zero extent.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    y = exps / np.sum(exps, axis=axis, keepdims=True)

    def backward_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), "softmax", backward_fn)


# -- temporal operators ----------------------------------------------------------------


@lru_cache(maxsize=256)
def pooling_matrix(length: int, kernel: int) -> np.ndarray:
    """
    The (length, length) matrix of a centred moving average with replicated edges.

    Row t averages indices t-left .. t+right clipped into [0, length-1], where
    left = (kernel-1)//2 and right = kernel-1-left.
    """
    if kernel < 1:
        raise ConfigError(f"pooling kernel must be >= 1, got {kernel}")
    left = (kernel - 1) // 2
    right = kernel - 1 - left
    matrix = np.zeros((length, length), dtype=DTYPE)
    for t in range(length):
        for j in range(t - left, t + right + 1):
            matrix[t, min(max(j, 0), length - 1)] += 1.0 / kernel
    matrix.setflags(write=False)
    return matrix


def avg_pool_same(x: ArrayLike, kernel: int) -> Tensor:
    """
    Moving average along the time axis (-2) that keeps the series length.

    Args:
        x: Tensor of shape [..., H, d].
        kernel: Window length (>= 1).
    """
    x = as_tensor(x)
    if kernel < 1:
        raise ConfigError(f"pooling kernel must be >= 1, got {kernel}")
    if x.ndim < 2:
        raise DimensionError(f"avg_pool_same needs [..., H, d], got {x.shape}")
    return matmul(Tensor(pooling_matrix(x.shape[-2], kernel), copy=False), x)


def rdft(x: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Real-input DFT of a series, as amplitudes and phases.

    Uses the unnormalized forward convention, so a constant series c of
    length H has A[0] = c*H.

    Returns:
        (amplitudes, phases), each of length H//2 + 1.
    """
    series = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    if series.ndim != 1 or series.shape[0] < 2:
        raise ConfigError(f"rdft needs a series of length >= 2, got shape {series.shape}")
    spectrum = np.fft.rfft(series)
    return np.abs(spectrum), np.angle(spectrum)


def irdft(amplitudes: np.ndarray, phases: np.ndarray, length: int) -> np.ndarray:
    """Inverse of `rdft` (1/H normalization)."""
    return np.fft.irfft(np.asarray(amplitudes) * np.exp(1j * np.asarray(phases)), n=length)


def fourier_project(x: ArrayLike, keep: np.ndarray) -> Tensor:
    """
    Keeps only the selected frequency bins of each series along axis -2.

    Args:
        x: Tensor of shape [..., H, d].
        keep: Boolean mask of shape [..., H//2 + 1, d].

    The map is an orthogonal projection for a fixed mask, so its adjoint (the
    backward pass) is the same projection applied to the incoming gradient.
    """
    x = as_tensor(x)
    length = x.shape[-2]
    expected = x.shape[:-2] + (length // 2 + 1, x.shape[-1])
    if keep.shape != expected:
        raise DimensionError(f"frequency mask {keep.shape} does not match series {x.shape}")

    def project(values: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(values, axis=-2) * keep, n=length, axis=-2)

    return _result(project(x.data), (x,), "fourier_project", lambda g: (project(g),))


# -- modules ---------------------------------------------------------------------------


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """
    Base class for parameter containers.

    Parameters are discovered from public attributes: trainable tensors,
    nested modules and lists of modules, in attribute insertion order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield f"{prefix}{key}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{index}.")

    def parameters(self) -> Dict[str, Tensor]:
        """Ordered mapping of parameter names to tensors."""
        return dict(self.named_parameters())


class Linear(Module):
    """Trainable affine map [*, in] -> [*, out]."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero: bool = False,
    ) -> None:
        shape = (in_features, out_features)
        weight = np.zeros(shape) if zero else uniform_init(rng, shape, in_features)
        self.weight = parameter(weight)
        self.bias = None
        if bias:
            values = (
                np.zeros(out_features) if zero
                else uniform_init(rng, (out_features,), in_features)
            )
            self.bias = parameter(values)

    def __call__(self, x: ArrayLike) -> Tensor:
        return linear(x, self.weight, self.bias)
