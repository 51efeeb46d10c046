"""Collapse subword token features into word-level cluster features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor


@dataclass(frozen=True)
class ClusterAssignment:
    offsets: tuple[int, ...]  # cluster index per token, -1 for specials
    k: int

    def __post_init__(self):
        valid = [o for o in self.offsets if o >= 0]
        if not valid:
            raise ValueError("no non-special tokens to cluster")
        if any(b < a for a, b in zip(valid, valid[1:])) or valid[0] != 0:
            raise ValueError("cluster offsets must be nondecreasing from 0")
        if set(valid) != set(range(self.k)):
            raise ValueError(f"offsets do not cover every cluster in [0, {self.k})")

    def sizes(self) -> np.ndarray:
        offs = np.asarray(self.offsets)
        return np.bincount(offs[offs >= 0], minlength=self.k)


def compute_offsets(word_ids, chunk_size: int | None = None) -> ClusterAssignment:
    """One cluster per word, or per ``chunk_size`` consecutive words."""
    offsets = []
    for w in word_ids:
        if w < 0:
            offsets.append(-1)
        else:
            offsets.append(w if chunk_size is None else w // chunk_size)
    valid = [o for o in offsets if o >= 0]
    if not valid:
        raise ValueError("no non-special tokens to cluster")
    return ClusterAssignment(tuple(offsets), max(valid) + 1)


def pooling_matrix(assignment: ClusterAssignment, length: int | None = None, rows: int | None = None) -> np.ndarray:
    """[k, T] matrix whose product with token features gives cluster means."""
    offs = np.asarray(assignment.offsets)
    t = len(offs) if length is None else length
    p = np.zeros((assignment.k if rows is None else rows, t))
    sizes = assignment.sizes()
    for i, o in enumerate(offs):
        if o >= 0:
            p[o, i] = 1.0 / sizes[o]
    return p


def aggregate(token_feats: Tensor, assignment: ClusterAssignment) -> Tensor:
    if token_feats.shape[-2] != len(assignment.offsets):
        raise ValueError(f"{token_feats.shape[-2]} token rows but {len(assignment.offsets)} offsets")
    return Tensor(pooling_matrix(assignment)) @ token_feats


def aggregate_batch(token_feats: Tensor, assignments: list[ClusterAssignment]) -> tuple[Tensor, np.ndarray]:
    """Padded batch version: [B, T, D] -> ([B, Kmax, D], cluster counts [B]).

    Token rows beyond an assignment's length (padding) get zero weight.
    """
    t = token_feats.shape[-2]
    ks = np.array([a.k for a in assignments])
    kmax = int(ks.max())
    for a in assignments:
        if len(a.offsets) > t:
            raise ValueError("assignment longer than padded token axis")
    p = np.stack([pooling_matrix(a, t, kmax) for a in assignments])
    return Tensor(p) @ token_feats, ks
