"""Finite-difference gradient suite over every differentiable building block.

Each case draws a random instance from a generator and returns ``(f, inputs)``
for :func:`numerics.grad_check`. Vector-valued ops are reduced to a scalar by
a fixed random projection so every output coordinate contributes.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import numerics as nx
from .clusters import ClusterAssignment, aggregate, aggregate_batch
from .hal import ROW_OPS, SCORINGS, HALConfig, AlignmentBatch, ProjectionHeads, Temperature, contrastive_pair, hal_loss, info_nce, local_similarity
from .nn import TransformerBlock, key_padding_mask
from .numerics import Tensor
from .sgt import lm_loss, sgt_loss, stm_loss
from .signef import SignEFParams, signef
from .skeleton import STGCNBlock, build_adjacency

Case = Callable[[np.random.Generator, int], tuple[Callable[..., Tensor], list[Tensor]]]


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _scalarise(g, rng):
    """Wrap ``g`` so its output is projected onto one fixed random direction."""
    holder = {}

    def f(*xs):
        out = g(*xs)
        if "w" not in holder:
            holder["w"] = rng.normal(size=out.shape)
        return (out * holder["w"]).sum()

    return f


def case_matmul(rng, i):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    if i % 2:
        a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    return _scalarise(nx.matmul, rng), [a, b]


def case_softmax(rng, i):
    x = _t(rng, 3, 5, scale=2.0)
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    return _scalarise(lambda x: nx.softmax(x, mask if i % 2 else None), rng), [x]


def case_log_softmax(rng, i):
    return _scalarise(nx.log_softmax, rng), [_t(rng, 2, 6, scale=2.0)]


def case_layer_norm(rng, i):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    return _scalarise(nx.layer_norm, rng), [x, g, b]


def case_gelu(rng, i):
    return _scalarise(nx.gelu, rng), [_t(rng, 4, 3, scale=2.0)]


def case_l2_normalize(rng, i):
    return _scalarise(nx.l2_normalize, rng), [_t(rng, 3, 5)]


def case_attention(rng, i):
    q, k, v = _t(rng, 2, 3, 4), _t(rng, 2, 5, 4), _t(rng, 2, 5, 4)
    mask = key_padding_mask(np.array([5, 2 + i % 3]), 3, 5)
    return _scalarise(lambda q, k, v: nx.attention(q, k, v, mask), rng), [q, k, v]


def case_transformer_block(rng, i):
    blk = TransformerBlock(rng, 8, 2)
    x = _t(rng, 2, 4, 8)
    mask = key_padding_mask(np.array([4, 3]), 4, 4)
    params = list(blk.parameters())[: 2 + i]
    return _scalarise(lambda x, *_: blk(x, mask), rng), [x, *params]


def case_stgcn(rng, i):
    adj = Tensor(build_adjacency("b"))
    blk = STGCNBlock(rng, 3, 4)
    x = _t(rng, 5, 9, 3)
    mask = Tensor(np.array([1, 1, 1, 1, float(i % 2)])[:, None, None])
    return _scalarise(lambda x, w: blk(x, adj, mask), rng), [x, blk.temporal_w]


def case_signef(rng, i):
    p = SignEFParams(rng, 8, 2)
    for m in p.layers[0].values():
        m.wout.data[...] = rng.normal(size=(8, 8)) * 0.3
    proj = p.for_layer(0)
    s, t = _t(rng, 2, 5, 8), _t(rng, 2, 4, 8)
    sl, tl = np.array([5, 3]), np.array([4, 2 + i % 3])

    def f(s, t, wq, wv):
        rs, rt = signef(s, t, proj, 2, sl, tl)
        return nx.concat([rs.reshape(-1), rt.reshape(-1)])

    return _scalarise(f, rng), [s, t, proj["sign"].wq, proj["text"].wv]


def case_aggregator(rng, i):
    a = ClusterAssignment((-1, 0, 0, 1, 2, 2, 2, -1), 3)
    b = ClusterAssignment((-1, 0, 1, 1, -1), 2)
    x = _t(rng, 2, 8, 4)
    if i % 2:
        return _scalarise(lambda x: aggregate(x[0], a), rng), [x]
    return _scalarise(lambda x: aggregate_batch(x, [a, b])[0], rng), [x]


def case_info_nce(rng, i):
    m = _t(rng, 4, 4)
    log_tau = Tensor(np.array(np.log(0.07 + 0.1 * i)), requires_grad=True)
    return (lambda m, lt: info_nce(m, nx.exp(lt))), [m, log_tau]


def case_local_alignment(rng, i):
    q, k = _t(rng, 3, 5, 4), _t(rng, 3, 4, 4)
    ql, kl = np.array([5, 3, 4]), np.array([4, 2, 3])
    row_op = ROW_OPS[i % len(ROW_OPS)]
    scoring = SCORINGS[i % len(SCORINGS)]

    def f(q, k):
        qn, kn = nx.l2_normalize(q), nx.l2_normalize(k)
        s2t = local_similarity(qn, ql, kn, kl, row_op, scoring)
        t2s = local_similarity(kn, kl, qn, ql, row_op, scoring)
        return contrastive_pair(s2t, t2s, 0.2)

    return f, [q, k]


def case_hal_loss(rng, i):
    heads = ProjectionHeads(rng, 6, 4)
    tau = Temperature()
    cfg = HALConfig(alpha=0.25 * (i % 5), row_op=ROW_OPS[i % 4], scoring="softmax")
    assigns = [ClusterAssignment((-1, 0, 1, -1), 2), ClusterAssignment((-1, 0, 0, -1), 1), ClusterAssignment((-1, 0, 1, 2), 3)]
    s_cls, t_cls = _t(rng, 3, 6), _t(rng, 3, 6)
    frames, toks = _t(rng, 3, 4, 6), _t(rng, 3, 4, 6)

    def f(s_cls, t_cls, frames, toks, w, lt):
        return hal_loss(AlignmentBatch(s_cls, t_cls, frames, np.array([4, 2, 3]), toks, assigns), heads, tau, cfg)

    return f, [s_cls, t_cls, frames, toks, heads.g_s.w, tau.log_tau]


def case_lm_loss(rng, i):
    logits = _t(rng, 2, 4, 7)
    targets = np.array([[3, 5, 2, 0], [6, 2, 0, 0]])
    return (lambda x: lm_loss(x, targets)), [logits]


def case_stm_loss(rng, i):
    logits = _t(rng, 6, scale=2.0)
    labels = np.array([1, 1, 1, 0, 0, 0])
    return (lambda x: stm_loss(x, labels)), [logits]


def case_sgt_loss(rng, i):
    beta = [0.0, 0.25, 0.5, 0.75, 1.0][i % 5]
    targets = np.array([[3, 2], [4, 2]])
    labels = np.array([1, 1, 0, 0])

    def f(z, logits):
        return sgt_loss(stm_loss(z, labels), lm_loss(logits, targets), beta)

    return f, [_t(rng, 4), _t(rng, 2, 2, 5)]


CASES: dict[str, Case] = {
    "matmul": case_matmul,
    "softmax": case_softmax,
    "log_softmax": case_log_softmax,
    "layer_norm": case_layer_norm,
    "gelu": case_gelu,
    "l2_normalize": case_l2_normalize,
    "attention": case_attention,
    "transformer_block": case_transformer_block,
    "stgcn": case_stgcn,
    "signef": case_signef,
    "aggregator": case_aggregator,
    "info_nce": case_info_nce,
    "local_alignment": case_local_alignment,
    "hal_loss": case_hal_loss,
    "lm_loss": case_lm_loss,
    "stm_loss": case_stm_loss,
    "sgt_loss": case_sgt_loss,
}


def run_suite(names: list[str] | None = None, instances: int = 5, seed: int = 0, eps: float = 1e-6) -> dict[str, list[float]]:
    """Relative errors per case name, one entry per random instance."""
    out = {}
    for name in names or list(CASES):
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        errs = []
        for i in range(instances):
            f, inputs = CASES[name](rng, i)
            errs.append(nx.grad_check(f, inputs, eps))
        out[name] = errs
    return out


if __name__ == "__main__":
    t0 = time.perf_counter()
    for k, v in run_suite().items():
        print(f"{k:20s} {max(v):.2e}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
