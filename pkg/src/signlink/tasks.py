"""Unified fine-tuning: parameter transfer, teacher-forced loss, greedy decoding."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import Batch, SignTextModel
from .numerics import Tensor
from .sgt import lm_loss
from .text import BOS, EOS, Vocabulary, detokenize

TASKS = ("islr", "cslr", "slt")
TRANSFER_MODES = ("none", "sign_only", "sign_and_sgt", "full")

_SIGN = ("frontend.", "sign_proj.", "sign_pos", "sign_enc.")
_SGT = ("sgt.", "embed.")
_STM_SELF_ATTN = re.compile(r"^sgt\.stm\.\d+\.self_attn\.")


@dataclass(frozen=True)
class TransferFilter:
    mode: str = "sign_and_sgt"

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer mode {self.mode!r}; choose from {TRANSFER_MODES}")

    def __call__(self, name: str) -> bool:
        if self.mode == "full":
            return True
        if self.mode == "none":
            return False
        if name.startswith(_SIGN):
            return True
        if self.mode == "sign_only":
            return False
        return name.startswith(_SGT) and not _STM_SELF_ATTN.match(name)


@dataclass
class TransferManifest:
    copied: list[str]
    fresh: list[str]


def transfer_parameters(pretrained: dict[str, np.ndarray], target: SignTextModel, filt: TransferFilter) -> TransferManifest:
    """Copy selected pre-trained arrays into ``target`` by value; everything
    else keeps its fresh initialisation."""
    copied, fresh = [], []
    for name, p in target.named_parameters().items():
        if not filt(name):
            fresh.append(name)
            continue
        if name not in pretrained:
            raise KeyError(f"pre-trained bundle lacks parameter {name}")
        src = np.asarray(pretrained[name])
        if src.shape != p.shape:
            raise ValueError(f"{name}: shape {src.shape} vs {p.shape}")
        p.data[...] = src
        copied.append(name)
    return TransferManifest(copied, fresh)


def finetune_loss(logits: Tensor, targets) -> Tensor:
    return lm_loss(logits, targets)


def greedy_decode(model: SignTextModel, batch: Batch, max_len: int = 24) -> list[list[int]]:
    """Argmax decoding from BOS until EOS or ``max_len`` generated tokens.
    Returned sequences exclude BOS and EOS."""
    with nx.no_grad():
        cond, cond_len = model.encode_sign(batch)
        b = batch.size
        seqs = np.full((b, 1), BOS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        out: list[list[int]] = [[] for _ in range(b)]
        limit = min(max_len, model.embed.max_len - 1)
        for _ in range(limit):
            logits = model.sgt.lm_forward(seqs, None, cond, cond_len, conditioned=True)
            nxt = logits.data[:, -1].argmax(axis=-1)
            for i in range(b):
                if done[i]:
                    continue
                if nxt[i] == EOS:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
            if done.all():
                break
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    return out


def decode_strings(model: SignTextModel, batch: Batch, vocab: Vocabulary, max_len: int = 24) -> list[str]:
    return [detokenize(ids, vocab) for ids in greedy_decode(model, batch, max_len)]
