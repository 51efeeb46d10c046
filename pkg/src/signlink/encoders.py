"""Twin sign/text transformer stacks, co-executed so SignEF can exchange
residuals before each of the last ``F`` layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import LayerNorm, Module, TransformerBlock, key_padding_mask, param
from .numerics import Tensor
from .signef import SignEFParams, signef


class EncoderStack(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, depth: int, class_token: bool = False):
        self.layers = [TransformerBlock(rng, d, heads) for _ in range(depth)]
        self.norm = LayerNorm(d) if depth else None
        self.cls = param(rng.normal(0.0, 0.02, size=(1, d))) if class_token else None
        self.heads = heads

    @property
    def depth(self) -> int:
        return len(self.layers)

    def prepend_cls(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        c = nx.broadcast_to(self.cls, (*lead, 1, x.shape[-1]))
        return nx.concat([c, x], axis=-2)

    def finish(self, x: Tensor) -> Tensor:
        return self.norm(x) if self.norm is not None else x

    def forward(self, x: Tensor, lengths=None) -> Tensor:
        mask = None if lengths is None else key_padding_mask(lengths, x.shape[-2], x.shape[-2])
        for layer in self.layers:
            x = layer(x, mask)
        return self.finish(x)


@dataclass
class CoEncodeOutput:
    sign_tokens: Tensor  # [B, Ls+1, D], class token at row 0
    text_tokens: Tensor  # [B, Tt, D], CLS at row 0
    sign_lengths: np.ndarray
    text_lengths: np.ndarray

    @property
    def s_cls(self) -> Tensor:
        return self.sign_tokens[:, 0]

    @property
    def t_cls(self) -> Tensor:
        return self.text_tokens[:, 0]


def _batch(x: Tensor, lengths):
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1])
    return x, np.asarray(lengths)


def co_encode(
    sign_enc: EncoderStack,
    text_enc: EncoderStack,
    sign_in: Tensor,
    text_in: Tensor,
    fusion: SignEFParams | None,
    fusion_layers: int,
    sign_lengths=None,
    text_lengths=None,
) -> CoEncodeOutput:
    """Run both stacks layer by layer.

    ``sign_in`` excludes the class token, which is prepended here. Before
    layer ``i`` with ``i >= depth - F`` both streams receive the SignEF residual
    computed from their current states.
    """
    depth = sign_enc.depth
    if text_enc.depth != depth:
        raise ValueError("sign and text stacks must have equal depth")
    if not 0 <= fusion_layers <= depth:
        raise ValueError(f"fusion layers {fusion_layers} outside [0, {depth}]")
    if fusion_layers and fusion is None:
        raise ValueError("fusion parameters required when fusion_layers > 0")
    sign_in, s_len = _batch(sign_in, sign_lengths)
    text_in, t_len = _batch(text_in, text_lengths)
    s = sign_enc.prepend_cls(sign_in)
    s_len = s_len + 1
    t = text_in
    s_mask = key_padding_mask(s_len, s.shape[-2], s.shape[-2])
    t_mask = key_padding_mask(t_len, t.shape[-2], t.shape[-2])
    first_fused = depth - fusion_layers
    for i in range(depth):
        if i >= first_fused:
            s_res, t_res = signef(s, t, fusion.for_layer(i - first_fused), fusion.heads, s_len, t_len)
            s, t = s + s_res, t + t_res
        s = sign_enc.layers[i](s, s_mask)
        t = text_enc.layers[i](t, t_mask)
    return CoEncodeOutput(sign_enc.finish(s), text_enc.finish(t), s_len, t_len)


def encode_text_only(text_enc: EncoderStack, text_in: Tensor, lengths=None) -> Tensor:
    return text_enc(text_in, lengths)


def encode_sign_only(sign_enc: EncoderStack, sign_in: Tensor, lengths=None) -> tuple[Tensor, np.ndarray]:
    """Class token + sign stack without fusion (the fine-tuning path)."""
    sign_in, s_len = _batch(sign_in, lengths)
    s = sign_enc.prepend_cls(sign_in)
    return sign_enc(s, s_len + 1), s_len + 1
