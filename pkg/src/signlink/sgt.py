"""Sign-grounded text encoder with a matching path and a language-model path.

The matching (STM) path runs ``M`` blocks of self-attention, cross-attention
onto conditioning features, and feed-forward, then scores the STM token with
a linear head. The LM path runs ``N`` causal blocks and projects onto the
shared token table.

For fine-tuning the LM path becomes a sign-conditioned decoder: LM block
``j`` gets the cross-attention sublayer of STM block ``j`` spliced in between
its self-attention and feed-forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, causal_mask, key_padding_mask
from .numerics import Tensor
from .text import PAD, STM, TextEmbedding


class STMBlock(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.ln_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(rng, d)

    def forward(self, x, cond, self_mask, cross_mask):
        x = x + self.self_attn(self.ln_self(x), mask=self_mask)
        x = x + self.cross_attn(self.ln_cross(x), cond, mask=cross_mask)
        return x + self.ffn(self.ln_ffn(x))


class LMBlock(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(rng, d)


def _batched_ids(ids, lengths):
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if lengths is None:
        lengths = np.full(ids.shape[0], ids.shape[1])
    return ids, np.asarray(lengths), single


def _batched_cond(cond: Tensor, lengths, batch: int):
    if cond.ndim == 2:
        cond = nx.broadcast_to(cond, (batch, *cond.shape))
    if lengths is None:
        lengths = np.full(batch, cond.shape[-2])
    return cond, np.asarray(lengths)


def _cross_mask(q_len: int, cond_lengths) -> np.ndarray:
    cond_lengths = np.asarray(cond_lengths)
    return key_padding_mask(cond_lengths, q_len, int(cond_lengths.max()))


class SGTEncoder(Module):
    def __init__(self, rng: np.random.Generator, embed: TextEmbedding, d: int, heads: int, m: int = 2, n: int = 2):
        if m < 1 or n < 1:
            raise ValueError("both paths need at least one block")
        self.embed = embed
        self.stm = [STMBlock(rng, d, heads) for _ in range(m)]
        self.lm = [LMBlock(rng, d, heads) for _ in range(n)]
        self.stm_norm = LayerNorm(d)
        self.lm_norm = LayerNorm(d)
        self.stm_head = Linear(rng, d, 1)

    def stm_forward(self, ids, cond: Tensor, lengths=None, cond_lengths=None) -> Tensor:
        """Match logit per sequence; ``ids`` must start with the STM token."""
        ids, lengths, single = _batched_ids(ids, lengths)
        if (ids[:, 0] != STM).any():
            raise ValueError("matching input must start with the STM task token")
        cond, cond_lengths = _batched_cond(cond, cond_lengths, ids.shape[0])
        x = self.embed(ids)
        t = ids.shape[1]
        self_mask = key_padding_mask(lengths, t, t)
        cross_mask = _cross_mask(t, cond_lengths)
        for blk in self.stm:
            x = blk(x, cond, self_mask, cross_mask)
        logit = self.stm_head(self.stm_norm(x[:, 0])).reshape(ids.shape[0])
        return logit[0] if single else logit

    def lm_forward(self, ids, lengths=None, cond: Tensor | None = None, cond_lengths=None, conditioned: bool = False) -> Tensor:
        """Next-token logits [..., T, V].

        ``conditioned=False`` is the text-only pre-training path; ``True`` is
        the fine-tuning decoder, which needs ``cond``.
        """
        ids, lengths, single = _batched_ids(ids, lengths)
        if conditioned and cond is None:
            raise ValueError("conditioning features required for the conditioned decoder")
        b, t = ids.shape
        x = self.embed(ids)
        self_mask = causal_mask(t)[None] & key_padding_mask(lengths, t, t)
        if conditioned:
            cond, cond_lengths = _batched_cond(cond, cond_lengths, b)
            cross_mask = _cross_mask(t, cond_lengths)
        for j, blk in enumerate(self.lm):
            x = x + blk.self_attn(blk.ln_self(x), mask=self_mask)
            if conditioned and j < len(self.stm):
                src = self.stm[j]
                x = x + src.cross_attn(src.ln_cross(x), cond, mask=cross_mask)
            x = x + blk.ffn(blk.ln_ffn(x))
        logits = self.lm_norm(x) @ nx.swapaxes(self.embed.tokens, 0, 1)
        return logits[0] if single else logits


def lm_loss(logits: Tensor, targets) -> Tensor:
    """Token cross-entropy averaged over non-PAD positions of each sequence,
    then over the batch."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim == 1:
        targets = targets[None]
        logits = logits.reshape(1, *logits.shape)
    valid = targets != PAD
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("target sequence contains only padding")
    b, t = targets.shape
    logp = nx.log_softmax(logits)[np.arange(b)[:, None], np.arange(t)[None, :], targets]
    per_seq = (logp * valid).sum(axis=1) / counts
    return -per_seq.mean()


def stm_loss(logits: Tensor, labels) -> Tensor:
    return nx.bce_with_logits(logits, labels)


@dataclass
class MatchBatch:
    sign_index: np.ndarray  # which sign features each pair uses
    text_index: np.ndarray  # which text each pair uses
    labels: np.ndarray  # 1 = matched, 0 = mismatched


def sample_negatives(batch_size: int, seed) -> MatchBatch:
    """Positives in order, then one negative per sign with a uniformly drawn
    different text from the batch."""
    if batch_size < 2:
        raise ValueError("negative sampling needs a batch of at least 2")
    rng = np.random.default_rng(seed)
    idx = np.arange(batch_size)
    offs = rng.integers(1, batch_size, size=batch_size)
    neg = (idx + offs) % batch_size
    return MatchBatch(
        sign_index=np.concatenate([idx, idx]),
        text_index=np.concatenate([idx, neg]),
        labels=np.concatenate([np.ones(batch_size), np.zeros(batch_size)]),
    )


def sgt_loss(l_stm: Tensor, l_lm: Tensor, beta: float) -> Tensor:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return l_stm * (1.0 - beta) + l_lm * beta
