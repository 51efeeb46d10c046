"""Hierarchical alignment: global class-token and local cluster-wise contrast.

Local similarity between a query set (e.g. sign tokens of sample i) and a key
set (e.g. text clusters of sample j) is

    M = Q Kᵀ                    cosine similarities, [Lq, Lk]
    R = row_op(M)               one value per query row, [Lq]
    score = scoring(R)          scalar

evaluated for every (i, j) pair of a batch at once on padded tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .clusters import ClusterAssignment, aggregate_batch
from .nn import Linear, Module, param
from .numerics import Tensor

ROW_OPS = ("max", "average", "topk_average", "softmax")
SCORINGS = ("sum", "average", "log_sum_exp", "softmax", "variance_reduced_sum")

TAU_MIN, TAU_MAX = 0.01, 1.0


@dataclass
class HALConfig:
    alpha: float = 0.5
    row_op: str = "max"
    scoring: str = "softmax"
    project_local: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.row_op not in ROW_OPS:
            raise ValueError(f"unknown row_op {self.row_op!r}; choose from {ROW_OPS}")
        if self.scoring not in SCORINGS:
            raise ValueError(f"unknown scoring {self.scoring!r}; choose from {SCORINGS}")


class ProjectionHeads(Module):
    def __init__(self, rng: np.random.Generator, d: int, d_proj: int = 64):
        self.g_s = Linear(rng, d, d_proj)
        self.g_t = Linear(rng, d, d_proj)

    def sign(self, x: Tensor) -> Tensor:
        return nx.l2_normalize(self.g_s(x))

    def text(self, x: Tensor) -> Tensor:
        return nx.l2_normalize(self.g_t(x))


class Temperature(Module):
    def __init__(self, init: float = 0.07):
        self.log_tau = param(np.array(math.log(init)))

    def __call__(self) -> Tensor:
        return nx.clamp(nx.exp(self.log_tau), TAU_MIN, TAU_MAX)

    def clip_(self) -> None:
        """Keep the raw parameter inside the clamp range after an update."""
        np.clip(self.log_tau.data, math.log(TAU_MIN), math.log(TAU_MAX), out=self.log_tau.data)


def topk_count(n) -> np.ndarray:
    return np.maximum(1, np.asarray(n) // 3)


def global_similarity(s_cls: Tensor, t_cls: Tensor, heads: ProjectionHeads | None = None) -> Tensor:
    if s_cls.shape[0] != t_cls.shape[0]:
        raise ValueError(f"batch mismatch: {s_cls.shape[0]} signs vs {t_cls.shape[0]} texts")
    if heads is not None:
        s_cls, t_cls = heads.sign(s_cls), heads.text(t_cls)
    return s_cls @ nx.swapaxes(t_cls, -1, -2)


def pad_sequences(seqs: list[Tensor]) -> tuple[Tensor, np.ndarray]:
    """Stack [L_i, D] tensors into a zero-padded [B, Lmax, D] tensor."""
    if not seqs:
        raise ValueError("empty token list")
    lengths = np.array([s.shape[0] for s in seqs])
    if (lengths == 0).any():
        raise ValueError("every sequence needs at least one token")
    lmax = int(lengths.max())
    return nx.stack([nx.pad_axis(s, 0, lmax - s.shape[0], axis=0) for s in seqs]), lengths


def _row_op(m: Tensor, key_mask: np.ndarray, key_lengths: np.ndarray, op: str) -> Tensor:
    if op == "max":
        return nx.masked_max(m, key_mask)
    if op == "average":
        return (m * key_mask).sum(axis=-1) / key_lengths
    if op == "topk_average":
        return nx.topk_mean(m, topk_count(key_lengths), key_mask)
    if op == "softmax":
        return (nx.softmax(m, key_mask) * m).sum(axis=-1)
    raise ValueError(f"unknown row_op {op!r}")


def _score(r: Tensor, q_mask: np.ndarray, q_lengths: np.ndarray, scoring: str) -> Tensor:
    if scoring == "sum":
        return (r * q_mask).sum(axis=-1)
    if scoring == "average":
        return (r * q_mask).sum(axis=-1) / q_lengths
    if scoring == "log_sum_exp":
        return nx.logsumexp(r, q_mask)
    if scoring == "softmax":
        return (nx.softmax(r, q_mask) * r).sum(axis=-1)
    if scoring == "variance_reduced_sum":
        centre = (r * q_mask).sum(axis=-1, keepdims=True) / q_lengths[..., None]
        return ((r - centre) * q_mask).sum(axis=-1)
    raise ValueError(f"unknown scoring {scoring!r}")


def local_similarity(
    queries: Tensor,
    q_lengths,
    keys: Tensor,
    k_lengths,
    row_op: str = "max",
    scoring: str = "softmax",
) -> Tensor:
    """[B, B] matrix; entry (i, j) scores query set i against key set j.

    ``queries``: [B, Lq, D], ``keys``: [B, Lk, D], both zero-padded and
    L2-normalised per row.
    """
    q_lengths, k_lengths = np.asarray(q_lengths), np.asarray(k_lengths)
    b, lq = queries.shape[0], queries.shape[1]
    lk = keys.shape[1]
    if keys.shape[0] != b:
        raise ValueError("query and key batches differ in size")
    if (q_lengths < 1).any() or (k_lengths < 1).any():
        raise ValueError("empty token list")
    m = queries.reshape(b, 1, lq, -1) @ nx.swapaxes(keys, -1, -2).reshape(1, b, keys.shape[-1], lk)
    key_mask = (np.arange(lk)[None, :] < k_lengths[:, None])[None, :, None, :]
    r = _row_op(m, key_mask, k_lengths[None, :, None], row_op)
    q_mask = np.broadcast_to((np.arange(lq)[None, :] < q_lengths[:, None])[:, None, :], (b, b, lq))
    return _score(r, q_mask, np.broadcast_to(q_lengths[:, None], (b, b)).astype(float), scoring)


def _padded(x, lengths):
    if isinstance(x, list):
        return pad_sequences(x)
    return x, np.asarray(lengths)


def local_similarity_s2t(sign_tokens, clusters, config: HALConfig, sign_lengths=None, cluster_counts=None) -> Tensor:
    """Rows over sign tokens, row op across text clusters."""
    s, sl = _padded(sign_tokens, sign_lengths)
    c, cl = _padded(clusters, cluster_counts)
    return local_similarity(s, sl, c, cl, config.row_op, config.scoring)


def local_similarity_t2s(clusters, sign_tokens, config: HALConfig, cluster_counts=None, sign_lengths=None) -> Tensor:
    """Rows over text clusters, row op across sign tokens; entry (i, j) pairs
    text i with sign j."""
    c, cl = _padded(clusters, cluster_counts)
    s, sl = _padded(sign_tokens, sign_lengths)
    return local_similarity(c, cl, s, sl, config.row_op, config.scoring)


def _diag_ce(logits: Tensor) -> Tensor:
    idx = np.arange(logits.shape[0])
    return -nx.log_softmax(logits)[idx, idx].mean()


def contrastive_pair(m_s2t: Tensor, m_t2s: Tensor, tau: Tensor | float | None = None) -> Tensor:
    """½ (row cross-entropy of ``m_s2t`` + row cross-entropy of ``m_t2s``)
    against the diagonal, with optional temperature."""
    for m in (m_s2t, m_t2s):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {m.shape}")
    if tau is not None:
        m_s2t, m_t2s = m_s2t / tau, m_t2s / tau
    return (_diag_ce(m_s2t) + _diag_ce(m_t2s)) * 0.5


def info_nce(m: Tensor, tau: Tensor | float | None = None) -> Tensor:
    """Bidirectional InfoNCE over one similarity matrix (columns give the
    reverse direction)."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {m.shape}")
    return contrastive_pair(m, nx.swapaxes(m, 0, 1), tau)


@dataclass
class AlignmentBatch:
    """Encoder outputs needed by the alignment losses."""

    s_cls: Tensor  # [B, D]
    t_cls: Tensor  # [B, D]
    sign_frames: Tensor  # [B, L, D] frame tokens, class token removed
    frame_lengths: np.ndarray
    text_tokens: Tensor  # [B, T, D]
    assignments: list[ClusterAssignment]

    @classmethod
    def from_encoded(cls, enc, assignments) -> "AlignmentBatch":
        return cls(
            s_cls=enc.s_cls,
            t_cls=enc.t_cls,
            sign_frames=enc.sign_tokens[:, 1:],
            frame_lengths=np.asarray(enc.sign_lengths) - 1,
            text_tokens=enc.text_tokens,
            assignments=list(assignments),
        )


@dataclass
class HALTerms:
    global_loss: Tensor
    local_loss: Tensor
    total: Tensor


def hal_terms(batch: AlignmentBatch, heads: ProjectionHeads, tau: Temperature, config: HALConfig) -> HALTerms:
    if batch.s_cls.shape[0] < 2:
        raise ValueError("contrastive alignment needs a batch of at least 2")
    l_global = info_nce(global_similarity(batch.s_cls, batch.t_cls, heads), tau())
    clusters, counts = aggregate_batch(batch.text_tokens, batch.assignments)
    if config.project_local:
        sign_local, text_local = heads.sign(batch.sign_frames), heads.text(clusters)
    else:
        sign_local, text_local = nx.l2_normalize(batch.sign_frames), nx.l2_normalize(clusters)
    m_s2t = local_similarity_s2t(sign_local, text_local, config, batch.frame_lengths, counts)
    m_t2s = local_similarity_t2s(text_local, sign_local, config, counts, batch.frame_lengths)
    l_local = contrastive_pair(m_s2t, m_t2s)
    a = config.alpha
    return HALTerms(l_global, l_local, l_global * (1.0 - a) + l_local * a)


def hal_loss(batch: AlignmentBatch, heads: ProjectionHeads, tau: Temperature, config: HALConfig) -> Tensor:
    return hal_terms(batch, heads, tau, config).total
