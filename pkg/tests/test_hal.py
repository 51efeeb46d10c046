import itertools
import math

import numpy as np
import pytest

from signlink import numerics as nx
from signlink.clusters import ClusterAssignment
from signlink.hal import (
    ROW_OPS,
    SCORINGS,
    AlignmentBatch,
    HALConfig,
    ProjectionHeads,
    Temperature,
    global_similarity,
    hal_terms,
    info_nce,
    local_similarity,
    local_similarity_s2t,
    local_similarity_t2s,
    topk_count,
)
from signlink.numerics import Tensor


def _unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _row(m_row, op):
    if op == "max":
        return m_row.max()
    if op == "average":
        return m_row.mean()
    if op == "topk_average":
        k = max(1, len(m_row) // 3)
        return np.sort(m_row)[::-1][:k].mean()
    w = np.exp(m_row - m_row.max())
    return (w / w.sum()) @ m_row


def _score(r, scoring):
    if scoring == "sum":
        return r.sum()
    if scoring == "average":
        return r.mean()
    if scoring == "log_sum_exp":
        return math.log(np.exp(r).sum())
    if scoring == "softmax":
        w = np.exp(r - r.max())
        return (w / w.sum()) @ r
    return (r - r.mean()).sum()


def _oracle(qs, ks, op, scoring):
    b = len(qs)
    out = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            r = np.array([_row(np.array([q @ k for k in ks[j]]), op) for q in qs[i]])
            out[i, j] = _score(r, scoring)
    return out


@pytest.fixture(scope="module")
def ragged():
    rng = np.random.default_rng(7)
    signs = [_unit(rng, n, 4) for n in (5, 3, 7)]
    texts = [_unit(rng, n, 4) for n in (2, 4, 1)]
    return signs, texts


@pytest.mark.parametrize("op,scoring", list(itertools.product(ROW_OPS, SCORINGS)))
def test_local_similarity_matches_triple_loop(op, scoring, ragged):
    signs, texts = ragged
    cfg = HALConfig(row_op=op, scoring=scoring)
    s2t = local_similarity_s2t([Tensor(s) for s in signs], [Tensor(t) for t in texts], cfg).data
    t2s = local_similarity_t2s([Tensor(t) for t in texts], [Tensor(s) for s in signs], cfg).data
    np.testing.assert_allclose(s2t, _oracle(signs, texts, op, scoring), atol=1e-12)
    np.testing.assert_allclose(t2s, _oracle(texts, signs, op, scoring), atol=1e-12)


def test_topk_counts():
    assert topk_count([1, 2, 3, 5, 6, 7]).tolist() == [1, 1, 1, 1, 2, 2]


def test_single_key_row_ops_agree(rng):
    q, k = Tensor(_unit(rng, 2, 3, 4)), Tensor(_unit(rng, 2, 1, 4))
    res = [local_similarity(q, [3, 3], k, [1, 1], op, "sum").data for op in ROW_OPS]
    for r in res[1:]:
        np.testing.assert_allclose(r, res[0], atol=1e-12)


def test_variance_reduced_sum_is_zero(rng):
    q, k = Tensor(_unit(rng, 3, 4, 4)), Tensor(_unit(rng, 3, 2, 4))
    out = local_similarity(q, [4, 2, 3], k, [2, 2, 1], "max", "variance_reduced_sum").data
    assert np.abs(out).max() < 1e-12


def test_empty_token_list(rng):
    with pytest.raises(ValueError):
        local_similarity(Tensor(np.zeros((2, 2, 3))), [2, 0], Tensor(np.zeros((2, 2, 3))), [1, 1])


def test_info_nce_uniform_is_log_b():
    for b in (2, 5, 9):
        assert abs(info_nce(Tensor(np.zeros((b, b)))).item() - math.log(b)) < 1e-12


def test_info_nce_temperature_case():
    b, tau = 4, 0.07
    m = np.full((b, b), -1.0)
    np.fill_diagonal(m, 1.0)
    expected = math.log(1 + (b - 1) * math.exp(-2 / tau))
    assert abs(info_nce(Tensor(m), tau).item() - expected) < 1e-12


def test_info_nce_permutation_invariance(rng):
    m = rng.normal(size=(5, 5))
    p = rng.permutation(5)
    a = info_nce(Tensor(m)).item()
    b = info_nce(Tensor(m[p][:, p])).item()
    assert abs(a - b) < 1e-12


def test_global_similarity_scale_invariant(rng):
    heads = ProjectionHeads(rng, 6, 4)
    s, t = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    for head in (heads.g_s, heads.g_t):
        head.b.data[...] = 0.0
    a = global_similarity(Tensor(s), Tensor(t), heads).data
    b = global_similarity(Tensor(3.0 * s), Tensor(0.5 * t), heads).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.abs(a).max() <= 1 + 1e-12


def test_diagonal_monotonicity(rng):
    m = rng.normal(size=(4, 4))
    prev = info_nce(Tensor(m)).item()
    for _ in range(5):
        m[np.diag_indices(4)] += 0.5
        cur = info_nce(Tensor(m)).item()
        assert cur < prev
        prev = cur


def test_temperature_clamped():
    t = Temperature()
    assert abs(t().item() - 0.07) < 1e-12
    t.log_tau.data[...] = 5.0
    assert t().item() == 1.0
    t.clip_()
    assert abs(t.log_tau.item() - 0.0) < 1e-12
    t.log_tau.data[...] = -50.0
    assert t().item() == 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        HALConfig(alpha=1.5)
    with pytest.raises(ValueError):
        HALConfig(row_op="median")
    with pytest.raises(ValueError):
        HALConfig(scoring="mode")


def _alignment(rng, b=3, d=6):
    assigns = [ClusterAssignment((-1, 0, 1, -1), 2), ClusterAssignment((-1, 0, 0, -1), 1), ClusterAssignment((-1, 0, 1, 2), 3)][:b]
    return AlignmentBatch(
        Tensor(rng.normal(size=(b, d))),
        Tensor(rng.normal(size=(b, d))),
        Tensor(rng.normal(size=(b, 4, d))),
        np.array([4, 2, 3][:b]),
        Tensor(rng.normal(size=(b, 4, d))),
        assigns,
    )


def test_alpha_endpoints(rng):
    heads, tau, batch = ProjectionHeads(rng, 6, 4), Temperature(), _alignment(rng)
    g = hal_terms(batch, heads, tau, HALConfig(alpha=0.0))
    l = hal_terms(batch, heads, tau, HALConfig(alpha=1.0))
    assert g.total.item() == g.global_loss.item()
    assert l.total.item() == l.local_loss.item()
    mid = hal_terms(batch, heads, tau, HALConfig(alpha=0.3))
    assert abs(mid.total.item() - (0.7 * mid.global_loss.item() + 0.3 * mid.local_loss.item())) < 1e-12


def test_batch_of_one_rejected(rng):
    with pytest.raises(ValueError):
        hal_terms(_alignment(rng, b=1), ProjectionHeads(rng, 6, 4), Temperature(), HALConfig())


def test_hal_gradcheck(rng):
    heads, tau, batch = ProjectionHeads(rng, 6, 4), Temperature(), _alignment(rng)

    def f(s_cls, frames, toks, w, lt):
        b = AlignmentBatch(s_cls, batch.t_cls, frames, batch.frame_lengths, toks, batch.assignments)
        return hal_terms(b, heads, tau, HALConfig(alpha=0.5, row_op="softmax")).total

    assert nx.grad_check(f, [batch.s_cls, batch.sign_frames, batch.text_tokens, heads.g_t.w, tau.log_tau]) <= 1e-5
