"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient the
output keeps a reference to its parents and a closure that maps the output
gradient to input gradients. :func:`backward` materialises the graph into a
topologically ordered :class:`ComputationTape`, runs it once, and frees it.

Elementwise ops follow numpy broadcasting; gradients are summed back to the
input shape.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationTape",
    "NonFiniteError",
    "GraphError",
    "tensor",
    "zeros",
    "no_grad",
    "checked",
    "set_checked",
    "backward",
    "grad_check",
]

_GRAD_ENABLED = True
_CHECKED = True


class NonFiniteError(FloatingPointError):
    """Raised in checked mode when an op produces NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (detached loss, freed graph, ...)."""


def set_checked(flag: bool) -> bool:
    """Toggle finiteness checks; returns the previous setting."""
    global _CHECKED
    prev, _CHECKED = _CHECKED, bool(flag)
    return prev


@contextlib.contextmanager
def checked(flag: bool = True):
    prev = set_checked(flag)
    try:
        yield
    finally:
        set_checked(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_freed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None
        self._freed = False
        self.name = name
        if _CHECKED and not np.isfinite(self.data).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = None
        t._freed = False
        t.name = None
        return t

    # -- basic properties -------------------------------------------------
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
        return self._op is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _CHECKED and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output from op '{op}'")
    out = Tensor._wrap(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere, which keeps gradchecks honest."""
    z = x.data
    inner = _GELU_C * (z + 0.044715 * z**3)
    t = np.tanh(inner)
    out = 0.5 * z * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw, "gelu")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def getitem(x: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), bw, "getitem")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (embedding lookup, batch re-pairing)."""
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0) if indices.ndim == 1 else g)
        return (full,)

    if indices.ndim != 1 and axis != 0:
        raise ValueError("multi-dimensional indices are only supported on axis 0")
    return _make(np.take(x.data, indices, axis=axis), (x,), bw, "take")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([x.data for x in xs], axis=ax), xs, bw, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _make(np.stack([x.data for x in xs], axis=axis), xs, bw, "stack")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _make(
        np.array(np.broadcast_to(x.data, shape)),
        (x,),
        lambda g: (_unbroadcast(g, x.shape),),
        "broadcast_to",
    )


def pad_axis(x: Tensor, before: int, after: int, axis: int) -> Tensor:
    """Zero-pad along one axis."""
    ax = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[ax] = (before, after)
    n = x.shape[ax]

    def bw(g):
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(before, before + n)
        return (g[tuple(sl)],)

    return _make(np.pad(x.data, widths), (x,), bw, "pad")


# ---------------------------------------------------------------------------
# Reductions and linear algebra
# ---------------------------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis, keepdims) * (1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def _mask_array(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    try:
        return np.broadcast_to(m, shape)
    except ValueError:
        raise ValueError(f"mask shape {m.shape} incompatible with {shape}") from None


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (True = keep) zeroes excluded
    entries, and a fully masked slice yields all zeros."""
    m = _mask_array(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    s = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


softmax_lastdim = softmax


def log_softmax(x: Tensor) -> Tensor:
    zmax = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def logsumexp(x: Tensor, mask=None) -> Tensor:
    """log(sum(exp(x))) over the last axis, restricted to ``mask``."""
    m = _mask_array(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + zmax)[..., 0]
    w = e / s

    def bw(g):
        return (g[..., None] * w,)

    return _make(out, (x,), bw, "logsumexp")


def masked_max(x: Tensor, mask=None) -> Tensor:
    """Max over the last axis; ties resolve to the first index."""
    m = _mask_array(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    idx = z.argmax(axis=-1)
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _make(out, (x,), bw, "max")


def topk_mean(x: Tensor, k, mask=None) -> Tensor:
    """Mean of the ``k`` largest entries along the last axis.

    ``k`` is an int or an integer array broadcastable to ``x.shape[:-1]``.
    Ties are broken by index order (stable sort).
    """
    m = _mask_array(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    order = np.argsort(-z, axis=-1, kind="stable")
    kk = np.broadcast_to(np.asarray(k), x.shape[:-1])
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(x.shape[-1]), axis=-1)
    sel = rank < kk[..., None]
    weights = sel / kk[..., None]
    out = (np.where(sel, x.data, 0.0)).sum(axis=-1) / kk
    return _make(out, (x,), lambda g: (g[..., None] * weights,), "topk_mean")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    del d
    return _make(out, (x, gamma, beta), bw, "layer_norm")


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis slice to unit Euclidean norm."""
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    n = np.maximum(n, eps)
    out = x.data / n

    def bw(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / n,)

    return _make(out, (x,), bw, "l2_normalize")


def attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(q kᵀ / sqrt(d), masked) v over the trailing two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
        if m.shape[-2:] != scores.shape[-2:]:
            raise ValueError(f"mask shape {m.shape} does not match scores {scores.shape}")
    return matmul(softmax(scores, mask), v)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy, computed stably from logits."""
    y = np.asarray(labels, dtype=np.float64)
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean())
    sig = 1.0 / (1.0 + np.exp(-z))

    def bw(g):
        return (g * (sig - y) / z.size,)

    return _make(out, (logits,), bw, "bce_with_logits")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


@dataclass
class ComputationTape:
    """Topologically ordered record of the ops behind one scalar loss."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or node.is_leaf:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and not p.is_leaf and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def run(self, loss: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._freed:
                raise GraphError("graph already consumed by a previous backward()")
            in_grads = node._backward(g)
            for p, gp in zip(node._parents, in_grads):
                if gp is None or not p.requires_grad:
                    continue
                if p.is_leaf:
                    p.grad = gp.copy() if p.grad is None else p.grad + gp
                elif id(p) in grads:
                    grads[id(p)] = grads[id(p)] + gp
                else:
                    grads[id(p)] = gp
        for node in self.nodes:
            node._freed = True
            node._backward = None


def backward(loss: Tensor) -> ComputationTape:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached from any tensor that requires grad")
    if loss._freed:
        raise GraphError("graph already consumed by a previous backward()")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return ComputationTape([])
    tape = ComputationTape.from_loss(loss)
    tape.run(loss)
    return tape


def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``f`` maps the input tensors to a scalar tensor; numeric derivatives use
    central differences of step ``eps``.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-8, 1e-4], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    if loss.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {loss.shape}")
    backward(loss)
    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f(*inputs).item()
                flat[i] = orig - eps
                lo = f(*inputs).item()
                flat[i] = orig
                numeric = (hi - lo) / (2 * eps)
                err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
