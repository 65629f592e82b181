"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op builds its output eagerly and, while recording is enabled and at
least one input is part of a graph, keeps a reference to its inputs plus a
closure mapping the output cotangent to input cotangents.  The graph lives as
long as the output tensor does, so ``backward`` may run repeatedly on the same
loss and gradients accumulate on the leaves.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import (
    EvaluationError,
    GraphError,
    NumericError,
    ParameterError,
    ShapeError,
)

GROUPS = ("backbone", "vqa", "cls")

_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor.__radd__

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite result in {op}")
    if _recording and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), back, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("only constant exponents are supported")
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), f"pow{p:g}")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), back, "gelu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


# reductions and shape ops ----------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)

    def back(g):
        z = np.zeros_like(a.data)
        if basic:
            z[index] = g
        else:
            np.add.at(z, index, g)
        return (z,)

    return _make(np.array(a.data[index]), (a,), back, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is ``[in, out]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    n_out = w.shape[1]
    out = x.data @ w.data
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (n_out,):
            raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
        out = out + b.data
        parents = (x, w, b)

    def back(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, back, "linear")


# normalisers -----------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return _make(out, (x,), lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def back(g):
        dxhat = g * gamma.data
        gx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), back, "layer_norm")


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as zero."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * x.data,)

    return _make(n, (x,), back, "l2_norm")


# temporal convolution --------------------------------------------------------

def conv1d_padded(x, kernel, pad_side: str = "before") -> Tensor:
    """Length-preserving 1-D correlation along the last axis.

    ``pad_side="before"`` prepends ``ks - 1`` zeros so that output ``i`` sees
    inputs ``i-ks+1 .. i`` (causal); ``"after"`` appends them so output ``i``
    sees ``i .. i+ks-1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 1 or kernel.shape[0] < 1:
        raise ParameterError(f"kernel must be a non-empty vector, got shape {kernel.shape}")
    if pad_side not in ("before", "after"):
        raise ParameterError(f"pad_side must be 'before' or 'after', got {pad_side!r}")
    ks = kernel.shape[0]
    n = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(ks - 1, 0) if pad_side == "before" else (0, ks - 1)]
    xp = np.pad(x.data, pad)
    windows = np.lib.stride_tricks.sliding_window_view(xp, ks, axis=-1)
    out = windows @ kernel.data
    lo = ks - 1 if pad_side == "before" else 0

    def back(g):
        gk = np.tensordot(g, windows, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        gxp = np.zeros_like(xp)
        for j in range(ks):
            gxp[..., j:j + n] += g * kernel.data[j]
        return gxp[..., lo:lo + n], gk

    return _make(out, (x, kernel), back, "conv1d_padded")


# parameters and backward -----------------------------------------------------

class ParameterStore:
    """Named trainable tensors, each tagged with one of ``GROUPS``."""

    def __init__(self):
        self._entries: dict[str, tuple[Tensor, str]] = {}

    def add(self, name: str, value, group: str) -> Tensor:
        if group not in GROUPS:
            raise ParameterError(f"unknown parameter group {group!r}")
        if name in self._entries:
            raise ParameterError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(np.array(value, dtype=np.float64))
        if any(t is other for other, _ in self._entries.values()):
            raise ParameterError(f"tensor for {name!r} is already registered under another name")
        t.requires_grad = True
        self._entries[name] = (t, group)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def group_of(self, name: str) -> str:
        return self._entries[name][1]

    def names(self, group: str | None = None) -> list[str]:
        return [n for n, (_, g) in self._entries.items() if group is None or g == group]

    def items(self, group: str | None = None) -> Iterator[tuple[str, Tensor]]:
        for n, (t, g) in self._entries.items():
            if group is None or g == group:
                yield n, t

    def zero_grad(self) -> None:
        for t, _ in self._entries.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t, _ in self._entries.values())

    def copy(self) -> ParameterStore:
        out = ParameterStore()
        for n, (t, g) in self._entries.items():
            out.add(n, Tensor(t.data.copy()), g)
        return out


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, store: ParameterStore | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Parameters of ``store`` that the loss does not reach get a zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss was not produced under graph recording")
    order = _toposort(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg
    if store is not None:
        for _, t in store.items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def flagged(self) -> list[str]:
        return [n for n, e in self.errors.items() if not e < self.tol]

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(
    f: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
    noise_ulps: float = 100.0,
) -> GradCheckReport:
    """Compare backward gradients with central differences ``(f(θ+h)-f(θ-h))/2h``.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor')``.
    The denominator floor keeps round-off on vanishing gradients from
    registering as error: ``floor' = max(floor, noise / tol)`` where
    ``noise = noise_ulps * eps * max(1, |f|) / h`` bounds the cancellation
    error of the difference quotient.  Gradients that are exactly zero by
    symmetry (e.g. attention key biases) would otherwise be flagged on noise.
    With ``max_entries`` set, that many entries per parameter are sampled.
    """
    store.zero_grad()
    loss = f(store)
    if not np.isfinite(loss.item()):
        raise EvaluationError("function value is not finite")
    backward(loss, store)
    analytic = {n: t.grad.copy() for n, t in store.items()}
    noise = noise_ulps * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / h
    floor = max(floor, noise / tol) if tol > 0 else floor
    rng = rng if rng is not None else np.random.default_rng(0)

    def value() -> float:
        with no_grad():
            v = f(store).item()
        if not np.isfinite(v):
            raise EvaluationError("function value is not finite under perturbation")
        return v

    errors, checked = {}, {}
    for name, t in store.items():
        idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            pos = np.unravel_index(i, t.shape)
            orig = t.data[pos]
            t.data[pos] = orig + h
            fp = value()
            t.data[pos] = orig - h
            fm = value()
            t.data[pos] = orig
            num = (fp - fm) / (2 * h)
            a = analytic[name][pos]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        errors[name] = worst
        checked[name] = len(idx)
    store.zero_grad()
    return GradCheckReport(errors, tol, checked)
