"""Dense-tensor numeric core: numpy storage, tape-based reverse-mode autodiff,
the operator set the scorer needs, Adam, and a finite-difference checker.

Training runs in 32-bit; gradient checks require 64-bit tensors. Tape nodes
are recorded whenever gradients are enabled and an input requires them; the
tape is released as part of ``backward``.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # defer mixed numpy/Tensor arithmetic to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


class Parameter(Tensor):
    """Trainable tensor with a unique name path; gradients accumulate until zeroed."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray, fresh: bool = True) -> None:
    """Add a gradient contribution.

    ``fresh`` promises the array (or the region a view covers) is exclusive to
    this call, so it can be installed without a defensive copy; callers pass
    False when the same buffer also reaches another pending tensor.
    """
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = grad if fresh else grad.copy()
    else:
        tensor.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, b.data.shape)
        if gb is ga:  # same buffer would reach two pending tensors
            gb = gb.copy()
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _node(np.matmul(a.data, b.data), (a, b), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, g / x.data)

    return _node(np.log(x.data), (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data > low) & (x.data < high)

    def backward(g):
        _accumulate(x, g * inside)

    return _node(np.clip(x.data, low, high), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    return _node(y, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    d = x.data
    squared = d * d
    t = np.tanh(_GELU_C * (d + 0.044715 * (squared * d)))
    half_one_plus_t = 0.5 * (1.0 + t)
    y = d * half_one_plus_t

    def backward(g):
        dt = (1.0 - t * t) * (_GELU_C * (1.0 + 0.134145 * squared))
        _accumulate(x, g * (half_one_plus_t + (0.5 * d) * dt))

    return _node(y, (x,), backward)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis; masked-out positions get exactly zero.

    ``mask`` is a boolean array broadcastable to x, True where attendable.
    Rows with at least one attendable position sum to 1.
    """
    logits = x.data
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    peak = logits.max(axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(logits - peak)
    denom = e.sum(axis=-1, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _node(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data
    n = d.shape[-1]
    mean = d.mean(axis=-1, keepdims=True)
    centered = d - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv

    def backward(g):
        reduce_axes = tuple(range(d.ndim - 1))
        _accumulate(gain, (g * normed).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            gn = g * gain.data
            term = n * gn - gn.sum(axis=-1, keepdims=True) - normed * (gn * normed).sum(axis=-1, keepdims=True)
            _accumulate(x, inv / n * term)

    return _node(normed * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity (same tensor) when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = (rng.random(x.data.shape) >= p) / np.asarray(1.0 - p, dtype=x.data.dtype)
    keep = keep.astype(x.data.dtype)

    def backward(g):
        _accumulate(x, g * keep)

    return _node(x.data * keep, (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: output[...] = table[ids[...]]; gradients scatter-add into the table."""
    ids = np.asarray(ids)

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, ids, g)
            _accumulate(table, buf)

    return _node(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# shape ops and reductions
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, g.transpose(inverse))

    return _node(x.data.transpose(axes), (x,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing with gradient placement."""

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[key] += g
            _accumulate(x, buf)

    return _node(x.data[key], (x,), backward)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; gradients accumulate into
    every reachable tensor with requires_grad. The tape is released."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._parents = ()
        node._backward = None


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Standard bias-corrected Adam with per-parameter moment buffers."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, state: AdamState) -> None:
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name!r} has no gradient")
        g = p.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.data, dtype=np.float64))
        v = state.v.setdefault(p.name, np.zeros_like(p.data, dtype=np.float64))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (state.lr * update).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


def finite_diff_check(
    loss_fn,
    params,
    eps: float = 1e-5,
    max_coords_per_param: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values
    on every call and be deterministic. Returns the max relative error over a
    coordinate subsample; only meaningful for 64-bit parameters.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError(f"gradient check requires float64 parameters ({p.name} is {p.data.dtype})")
    if rng is None:
        rng = np.random.default_rng(0)

    zero_grad(params)
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params}

    worst = 0.0
    with no_grad():
        for p in params:
            size = p.data.size
            if size <= max_coords_per_param:
                coords = np.arange(size)
            else:
                coords = rng.choice(size, size=max_coords_per_param, replace=False)
            flat = p.data.reshape(-1)
            for idx in coords:
                original = flat[idx]
                flat[idx] = original + eps
                f_plus = float(loss_fn().data)
                flat[idx] = original - eps
                f_minus = float(loss_fn().data)
                flat[idx] = original
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[p.name].reshape(-1)[idx])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if err > worst:
                    worst = err
    return worst
