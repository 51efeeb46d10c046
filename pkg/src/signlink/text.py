"""Toy subword tokenizer with word-id bookkeeping.

Word-initial pieces are stored as-is; continuation pieces carry a ``##``
prefix, so decoded token streams can be re-joined into words.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .nn import Module, param
from .numerics import Tensor

PAD, BOS, EOS, CLS, STM = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "<cls>", "<stm>")
CONT = "##"


class UnknownTokenError(KeyError):
    pass


class Vocabulary:
    def __init__(self, tokens=()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.frozen = False
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if self.frozen:
            raise UnknownTokenError(token)
        self.stoi[token] = len(self.itos)
        self.itos.append(token)
        return self.stoi[token]

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        lines = [f"{t}\t{i}\n" for i, t in enumerate(self.itos)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            tok, _, idx = line.rpartition("\t")
            if not _ or not idx.isdigit():
                raise ValueError(f"{path}:{n}: malformed vocabulary line")
            rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))) or tuple(t for _, t in rows[:5]) != RESERVED:
            raise ValueError(f"{path}: ids must be contiguous with reserved tokens first")
        vocab = cls(t for _, t in rows[5:])
        return vocab.freeze()


def build_vocab(corpus: list[str], max_size: int = 10_000) -> Vocabulary:
    """Reserved tokens, then whole words and single-character pieces ranked by
    frequency (ties lexicographic), truncated to ``max_size``."""
    if max_size < 6:
        raise ValueError("max_size must be at least 6")
    if not corpus:
        raise ValueError("corpus must be nonempty")
    counts: collections.Counter[str] = collections.Counter()
    for sentence in corpus:
        for word in sentence.split():
            pieces = {word, word[0]} | {CONT + c for c in word[1:]}
            counts.update(pieces)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, _ in ranked[: max_size - len(RESERVED)]).freeze()


@dataclass
class TokenizedText:
    ids: list[int]
    word_ids: list[int]
    words: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.ids) != len(self.word_ids):
            raise ValueError("ids and word_ids must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


def _split_word(word: str, vocab: Vocabulary, train: bool) -> list[int]:
    ids, start = [], 0
    while start < len(word):
        prefix = "" if start == 0 else CONT
        for end in range(len(word), start, -1):
            piece = prefix + word[start:end]
            if piece in vocab:
                ids.append(vocab.stoi[piece])
                start = end
                break
        else:
            piece = prefix + word[start]
            if not train:
                raise UnknownTokenError(f"cannot tokenize {word!r}: no piece for {piece!r}")
            was_frozen, vocab.frozen = vocab.frozen, False
            ids.append(vocab.add(piece))
            vocab.frozen = was_frozen
            start += 1
    return ids


def tokenize(text: str, vocab: Vocabulary, train: bool = False, lead: int = CLS) -> TokenizedText:
    """``lead`` + subwords + EOS. ``word_ids`` is -1 for specials."""
    words = text.split()
    if not words:
        raise ValueError("cannot tokenize an empty string")
    ids, wids = [lead], [-1]
    for w_idx, word in enumerate(words):
        pieces = _split_word(word, vocab, train)
        ids += pieces
        wids += [w_idx] * len(pieces)
    ids.append(EOS)
    wids.append(-1)
    return TokenizedText(ids, wids, words)


def detokenize(ids, vocab: Vocabulary) -> str:
    """Join pieces back into whitespace-separated words; specials are dropped."""
    words: list[str] = []
    for i in ids:
        if i < len(RESERVED):
            continue
        tok = vocab.itos[i]
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok.removeprefix(CONT))
    return " ".join(words)


class TextEmbedding(Module):
    """Token table plus learned additive positions. The token table doubles as
    the (tied) language-model output projection."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d: int, max_len: int = 64):
        self.tokens = param(rng.normal(0.0, d**-0.5, size=(vocab_size, d)))  # tied head: keep logits O(1)
        self.positions = param(rng.normal(0.0, 0.02, size=(max_len, d)))
        self.max_len = max_len

    def forward(self, ids) -> Tensor:
        return embed(ids, self.tokens, self.positions)


def embed(ids, table: Tensor, positions: Tensor) -> Tensor:
    """``ids``: [T] or [B, T] integer array -> [..., T, D]."""
    ids = np.asarray(ids.ids if isinstance(ids, TokenizedText) else ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of size {table.shape[0]}")
    t = ids.shape[-1]
    if t > positions.shape[0]:
        raise ValueError(f"sequence length {t} exceeds max length {positions.shape[0]}")
    return nx.take(table, ids, axis=0) + positions[:t]


def pad_batch(seqs: list[list[int]], pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists; returns (ids [B, T], lengths [B])."""
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), int(lengths.max())), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths
