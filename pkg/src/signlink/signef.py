"""Bidirectional cross-attention exchange between the sign and text streams.

Each modality owns query, value and output projections. Keys reuse the
source modality's query projection, so a stream's projected queries double
as the keys the other stream attends over. Output projections start at zero,
which makes the exchange a no-op until training moves them.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .nn import Module, expand_mask, key_padding_mask, merge_heads, param, split_heads, xavier
from .numerics import Tensor


class ModalityProjections(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        self.wq = param(xavier(rng, d, d))
        self.wv = param(xavier(rng, d, d))
        self.wout = param(np.zeros((d, d)))


class SignEFParams(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, layers: int = 1, shared: bool = True):
        self.heads = heads
        self.shared = shared
        n = 1 if shared else max(layers, 1)
        self.layers = [
            {"sign": ModalityProjections(rng, d), "text": ModalityProjections(rng, d)} for _ in range(n)
        ]

    def for_layer(self, i: int) -> dict[str, ModalityProjections]:
        return self.layers[0 if self.shared else i]


def signef(
    s: Tensor,
    t: Tensor,
    proj: dict[str, ModalityProjections],
    heads: int,
    s_lengths=None,
    t_lengths=None,
) -> tuple[Tensor, Tensor]:
    """Return (text-to-sign residual for S, sign-to-text residual for T).

    Both directions read the same pre-update ``s`` and ``t``. ``s``/``t`` are
    [Ls, D]/[Tt, D] or batched [B, Ls, D]/[B, Tt, D]; lengths mask padded keys.
    """
    if s.shape[-1] != t.shape[-1]:
        raise ValueError(f"width mismatch: sign {s.shape[-1]} vs text {t.shape[-1]}")
    ps, pt = proj["sign"], proj["text"]
    qs = split_heads(s @ ps.wq, heads)
    qt = split_heads(t @ pt.wq, heads)
    vs = split_heads(s @ ps.wv, heads)
    vt = split_heads(t @ pt.wv, heads)
    ls, lt = s.shape[-2], t.shape[-2]
    mask_t = mask_s = None
    if t_lengths is not None:
        mask_t = expand_mask(key_padding_mask(t_lengths, ls, lt))
    if s_lengths is not None:
        mask_s = expand_mask(key_padding_mask(s_lengths, lt, ls))
    s_att = merge_heads(nx.attention(qs, qt, vt, mask_t))
    t_att = merge_heads(nx.attention(qt, qs, vs, mask_s))
    return s_att @ ps.wout, t_att @ pt.wout
