"""Small module system on top of :mod:`signlink.numerics`.

Parameters are plain leaf tensors with ``requires_grad=True``; a module's
parameter names are the attribute paths that reach them, e.g.
``sign_enc.layers.0.attn.wq``.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _named(value, prefix: str, seen: set[int]) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad and value.is_leaf and id(value) not in seen:
            seen.add(id(value))
            yield prefix, value
    elif isinstance(value, Module):
        for k, v in value.__dict__.items():
            if k.startswith("_"):
                continue
            yield from _named(v, f"{prefix}.{k}" if prefix else k, seen)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _named(v, f"{prefix}.{k}" if prefix else str(k), seen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _named(v, f"{prefix}.{i}" if prefix else str(i), seen)


class Module:
    """Attribute-walking parameter container.

    A tensor reachable under several names (weight tying, shared fusion
    layers) is reported once, under the first name found.
    """

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(_named(self, "", set()))

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.w = param(np.zeros((d_in, d_out)) if zero else xavier(rng, d_in, d_out))
        self.b = param(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gamma, self.beta, self.eps)


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return nx.swapaxes(x.reshape(*lead, t, heads, d // heads), -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    return nx.swapaxes(x, -2, -3).reshape(*lead, t, h * dh)


def expand_mask(mask: np.ndarray | None) -> np.ndarray | None:
    """[..., Lq, Lk] boolean mask -> [..., 1, Lq, Lk] for the head axis."""
    if mask is None:
        return None
    return np.asarray(mask, dtype=bool)[..., None, :, :]


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.wq = param(xavier(rng, d, d))
        self.wk = param(xavier(rng, d, d))
        self.wv = param(xavier(rng, d, d))
        self.wo = param(xavier(rng, d, d))
        self.heads = heads

    def forward(self, x: Tensor, ctx: Tensor | None = None, mask=None) -> Tensor:
        ctx = x if ctx is None else ctx
        q = split_heads(x @ self.wq, self.heads)
        k = split_heads(ctx @ self.wk, self.heads)
        v = split_heads(ctx @ self.wv, self.heads)
        return merge_heads(nx.attention(q, k, v, expand_mask(mask))) @ self.wo


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d: int, mult: int = 4):
        self.fc1 = Linear(rng, d, mult * d)
        self.fc2 = Linear(rng, mult * d, d)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(nx.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, ff_mult: int = 4):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, ff_mult)

    def forward(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        return x + self.ffn(self.ln2(x))


def key_padding_mask(lengths, lq: int, lk: int) -> np.ndarray:
    """[B, Lq, Lk] mask letting every query see the first ``lengths[b]`` keys."""
    lengths = np.asarray(lengths)
    keys = np.arange(lk)[None, :] < lengths[:, None]
    return np.broadcast_to(keys[:, None, :], (len(lengths), lq, lk)).copy()


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))
