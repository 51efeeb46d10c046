"""Property-based checks of module invariants."""

import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from signlink import numerics as nx
from signlink.clusters import ClusterAssignment, aggregate, compute_offsets
from signlink.data import read_skl, write_skl
from signlink.hal import ROW_OPS, SCORINGS, AlignmentBatch, HALConfig, ProjectionHeads, Temperature, hal_terms, info_nce, local_similarity
from signlink.metrics import bleu, corpus_rouge_l, corpus_wer, rouge_l, wer
from signlink.numerics import Tensor
from signlink.sgt import SGTEncoder, sgt_loss
from signlink.signef import SignEFParams, signef
from signlink.text import BOS, TextEmbedding, build_vocab, detokenize, tokenize
from signlink.train import TrainConfig

settings.register_profile("signlink", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("signlink")

unit = st.floats(-1.0, 1.0, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)
words = st.text(alphabet="abcde", min_size=1, max_size=6)
sentences = st.lists(words, min_size=1, max_size=5).map(" ".join)


def _unit_rows(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# -- numerics ---------------------------------------------------------------


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=st.floats(-30, 30)), seeds)
def test_softmax_rows_and_permutation(x, seed):
    out = nx.softmax(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    perm = np.random.default_rng(seed).permutation(x.shape[-1])
    np.testing.assert_allclose(nx.softmax(Tensor(x[:, perm])).data, out[:, perm], rtol=0, atol=1e-15)


@given(seeds, st.sampled_from(["matmul", "layer_norm", "gelu", "log_softmax", "attention"]))
@settings(max_examples=20)
def test_primitive_gradients(seed, op):
    rng = np.random.default_rng(seed)
    u = lambda *s: Tensor(rng.uniform(-1, 1, size=s), requires_grad=True)
    w = rng.normal(size=(3, 4))
    if op == "matmul":
        f, xs = (lambda a, b: (a @ b * w).sum()), [u(3, 5), u(5, 4)]
    elif op == "layer_norm":
        f, xs = (lambda x, g, b: (nx.layer_norm(x, g, b) * w).sum()), [u(3, 4), u(4), u(4)]
    elif op == "gelu":
        f, xs = (lambda x: (nx.gelu(x) * w).sum()), [u(3, 4)]
    elif op == "log_softmax":
        f, xs = (lambda x: (nx.log_softmax(x) * w).sum()), [u(3, 4)]
    else:
        f, xs = (lambda q, k, v: (nx.attention(q, k, v) * w).sum()), [u(3, 2), u(5, 2), u(5, 4)]
    assert nx.grad_check(f, xs, 1e-6) <= 1e-4


@given(seeds)
@settings(max_examples=10)
def test_forward_bitwise_deterministic(seed):
    def run():
        rng = np.random.default_rng(seed)
        emb = TextEmbedding(rng, 10, 8, 8)
        enc = SGTEncoder(rng, emb, 8, 2, 1, 1)
        return enc.lm_forward(np.array([BOS, 5, 6, 7])).data.tobytes()

    assert run() == run()


# -- text and clusters -------------------------------------------------------


@given(st.lists(sentences, min_size=1, max_size=4))
def test_tokenize_round_trip_and_contiguous_word_ids(corpus):
    vocab = build_vocab(corpus)
    for s in corpus:
        tok = tokenize(s, vocab)
        assert detokenize(tok.ids, vocab) == " ".join(s.split())
        inner = tok.word_ids[1:-1]
        assert inner == sorted(inner) and set(inner) == set(range(len(s.split())))
        a = compute_offsets(tok.word_ids)
        assert a.k <= len(inner)


@given(sentences, sentences)
def test_prefix_stability(x, y):
    vocab = build_vocab([x + " " + y])
    a, b = tokenize(x, vocab), tokenize(x + " " + y, vocab)
    assert b.ids[: len(a.ids) - 1] == a.ids[:-1]


@st.composite
def assignments(draw):
    sizes = draw(st.lists(st.integers(1, 3), min_size=1, max_size=4))
    offs = [-1] + [j for j, n in enumerate(sizes) for _ in range(n)] + [-1]
    return ClusterAssignment(tuple(offs), len(sizes))


@given(assignments(), seeds)
def test_within_cluster_permutation_and_mass(a, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(len(a.offsets), 3))
    base = aggregate(Tensor(x), a).data
    offs = np.array(a.offsets)
    y = x.copy()
    for j in range(a.k):
        idx = np.flatnonzero(offs == j)
        y[idx] = x[rng.permutation(idx)]
    np.testing.assert_allclose(aggregate(Tensor(y), a).data, base, atol=1e-12)
    t = Tensor(x, requires_grad=True)
    g = rng.normal(size=base.shape)
    nx.backward((aggregate(t, a) * g).sum())
    np.testing.assert_allclose(t.grad.sum(), g.sum(), atol=1e-10)


# -- fusion --------------------------------------------------------------------


@given(seeds, st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=20)
def test_signef_swap_symmetry_and_shapes(seed, ls, lt):
    rng = np.random.default_rng(seed)
    p = SignEFParams(rng, 4, 2)
    for m in p.layers[0].values():
        m.wout.data[...] = rng.normal(size=(4, 4))
    proj = p.for_layer(0)
    s, t = Tensor(rng.normal(size=(ls, 4))), Tensor(rng.normal(size=(lt, 4)))
    rs, rt = signef(s, t, proj, 2)
    assert rs.shape == s.shape and rt.shape == t.shape
    rt2, rs2 = signef(t, s, {"sign": proj["text"], "text": proj["sign"]}, 2)
    np.testing.assert_array_equal(rs.data, rs2.data)
    np.testing.assert_array_equal(rt.data, rt2.data)


# -- alignment -------------------------------------------------------------------


def _naive_local(qs, ks, op, scoring):
    def row(m):
        if op == "max":
            return m.max()
        if op == "average":
            return m.mean()
        if op == "topk_average":
            return np.sort(m)[::-1][: max(1, len(m) // 3)].mean()
        w = np.exp(m - m.max())
        return w @ m / w.sum()

    out = np.zeros((len(qs), len(ks)))
    for i, q in enumerate(qs):
        for j, k in enumerate(ks):
            r = np.array([row(k @ v) for v in q])
            if scoring == "sum":
                out[i, j] = r.sum()
            elif scoring == "average":
                out[i, j] = r.mean()
            elif scoring == "log_sum_exp":
                out[i, j] = math.log(np.exp(r).sum())
            elif scoring == "softmax":
                w = np.exp(r - r.max())
                out[i, j] = w @ r / w.sum()
            else:
                out[i, j] = (r - r.mean()).sum()
    return out


@given(seeds, st.sampled_from(ROW_OPS), st.sampled_from(SCORINGS))
def test_local_similarity_oracle(seed, op, scoring):
    rng = np.random.default_rng(seed)
    ql, kl = rng.integers(1, 8, size=4), rng.integers(1, 6, size=4)
    qs = [_unit_rows(rng, n, 8) for n in ql]
    ks = [_unit_rows(rng, n, 8) for n in kl]
    pad = lambda xs, n: np.stack([np.pad(x, ((0, n - len(x)), (0, 0))) for x in xs])
    got = local_similarity(Tensor(pad(qs, ql.max())), ql, Tensor(pad(ks, kl.max())), kl, op, scoring).data
    np.testing.assert_allclose(got, _naive_local(qs, ks, op, scoring), atol=1e-9)


@given(arrays(np.float64, (4, 4), elements=unit), st.integers(0, 3), st.floats(0.01, 1.0))
def test_info_nce_diagonal_monotone(m, i, delta):
    before = info_nce(Tensor(m)).item()
    m2 = m.copy()
    m2[i, i] += delta
    assert info_nce(Tensor(m2)).item() < before


@given(seeds, st.sampled_from(ROW_OPS), st.sampled_from(SCORINGS), st.floats(0.0, 1.0))
@settings(max_examples=25)
def test_hal_batch_permutation_invariance(seed, op, scoring, alpha):
    rng = np.random.default_rng(seed)
    b, d = 4, 6
    heads, tau = ProjectionHeads(rng, d, 4), Temperature()
    assigns = [compute_offsets([-1] + list(range(n)) + [-1]) for n in (1, 2, 3, 2)]
    s_cls, t_cls = rng.normal(size=(b, d)), rng.normal(size=(b, d))
    frames, toks = rng.normal(size=(b, 5, d)), rng.normal(size=(b, 5, d))
    fl = np.array([5, 2, 4, 3])
    cfg = HALConfig(alpha, op, scoring)

    def loss(p):
        batch = AlignmentBatch(Tensor(s_cls[p]), Tensor(t_cls[p]), Tensor(frames[p]), fl[p], Tensor(toks[p]), [assigns[i] for i in p])
        return hal_terms(batch, heads, tau, cfg).total.item()

    assert abs(loss(np.arange(b)) - loss(rng.permutation(b))) < 1e-9


@given(seeds, st.floats(0.01, 100.0))
def test_local_similarity_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=(3, 4, 5)), _unit_rows(rng, 3, 3, 5)
    lens_q, lens_k = np.array([4, 2, 3]), np.array([3, 1, 2])
    scaled = q.copy()
    scaled[1] *= c
    a = local_similarity(nx.l2_normalize(Tensor(q)), lens_q, Tensor(k), lens_k, "max", "sum").data
    b = local_similarity(nx.l2_normalize(Tensor(scaled)), lens_q, Tensor(k), lens_k, "max", "sum").data
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- SGT ---------------------------------------------------------------------------


@given(seeds, st.integers(1, 4))
@settings(max_examples=15)
def test_causality(seed, t):
    rng = np.random.default_rng(seed)
    enc = SGTEncoder(rng, TextEmbedding(rng, 12, 8, 8), 8, 2, 1, 1)
    ids = np.concatenate([[BOS], rng.integers(5, 12, size=5)])
    changed = ids.copy()
    changed[t + 1 :] = rng.integers(5, 12, size=len(ids) - t - 1)
    np.testing.assert_array_equal(enc.lm_forward(ids).data[: t + 1], enc.lm_forward(changed).data[: t + 1])


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
def test_sgt_affine(a, b, beta):
    la, lb = Tensor(np.array(a)), Tensor(np.array(b))
    l0, l1 = sgt_loss(la, lb, 0.0).item(), sgt_loss(la, lb, 1.0).item()
    assert abs(sgt_loss(la, lb, beta).item() - (l0 + beta * (l1 - l0))) <= 1e-12 * max(1.0, a, b)


# -- metrics -----------------------------------------------------------------------


@given(sentences, sentences)
def test_wer_zero_iff_equal(a, b):
    assert (wer(a, b) == 0.0) == (a.split() == b.split())


@given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=5), seeds)
def test_corpus_metrics_bounded_and_order_insensitive(pairs, seed):
    refs, hyps = [p[0] for p in pairs], [p[1] for p in pairs]
    perm = np.random.default_rng(seed).permutation(len(pairs))
    pr, ph = [refs[i] for i in perm], [hyps[i] for i in perm]
    for n in range(1, 5):
        v = bleu(refs, hyps, n)
        assert 0.0 <= v <= 100.0 + 1e-9
        assert math.isclose(v, bleu(pr, ph, n), rel_tol=1e-12, abs_tol=1e-12)
    r = corpus_rouge_l(refs, hyps)
    assert 0.0 <= r <= 100.0 and math.isclose(r, corpus_rouge_l(pr, ph), rel_tol=1e-12, abs_tol=1e-12)
    assert corpus_wer(refs, hyps) == corpus_wer(pr, ph)
    assert bleu(refs, refs) == 100.0 >= bleu(refs, hyps) - 1e-9
    assert all(rouge_l(x, x) == 100.0 for x in refs)


# -- formats -----------------------------------------------------------------------


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(69), st.just(2)), elements=st.floats(-1e3, 1e3)))
def test_skl_round_trip(tmp_path_factory, frames):
    p = tmp_path_factory.mktemp("skl") / "x.skl"
    write_skl(p, frames)
    back = read_skl(p).frames
    np.testing.assert_array_equal(back, frames.astype(np.float32).astype(np.float64))


@given(
    st.floats(0, 1),
    st.floats(0, 1),
    st.one_of(st.none(), st.integers(1, 64)),
    st.one_of(st.none(), st.floats(0, 1, allow_subnormal=False)),
    st.sampled_from(ROW_OPS),
    st.booleans(),
)
def test_config_round_trip(alpha, beta, batch, lr, op, freeze):
    cfg = TrainConfig(alpha=alpha, beta=beta, batch_size=batch, base_lr=lr, row_op=op, freeze_text_encoder=freeze)
    assert TrainConfig.parse(cfg.render()) == cfg
