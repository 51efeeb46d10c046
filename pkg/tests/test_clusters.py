import numpy as np
import pytest

from signlink import numerics as nx
from signlink.clusters import ClusterAssignment, aggregate, aggregate_batch, compute_offsets
from signlink.numerics import Tensor
from signlink.text import CONT, Vocabulary, tokenize


def test_offsets_simple():
    a = compute_offsets([-1, 0, 1, -1])
    assert a.offsets == (-1, 0, 1, -1) and a.k == 2


def test_two_subword_word_is_one_cluster():
    v = Vocabulary(["curios", CONT + "ity"]).freeze()
    a = compute_offsets(tokenize("curiosity", v).word_ids)
    assert a.k == 1 and a.offsets == (-1, 0, 0, -1)


def test_surjective_coverage():
    v = Vocabulary(["a", "b", CONT + "b", "c"]).freeze()
    a = compute_offsets(tokenize("a bb c a", v).word_ids)
    counts = np.bincount([o for o in a.offsets if o >= 0], minlength=a.k)
    assert a.k == 4 and (counts > 0).all()
    assert a.k <= sum(o >= 0 for o in a.offsets)


def test_no_tokens():
    with pytest.raises(ValueError):
        compute_offsets([-1, -1])


def test_invariants_enforced():
    with pytest.raises(ValueError):
        ClusterAssignment((-1, 1, 0, -1), 2)
    with pytest.raises(ValueError):
        ClusterAssignment((-1, 0, 2, -1), 3)


def test_chunking_hook():
    a = compute_offsets([-1, 0, 1, 2, 3, 4, -1], chunk_size=2)
    assert a.offsets == (-1, 0, 0, 1, 1, 2, -1) and a.k == 3


def test_singleton_clusters_identity(rng):
    x = rng.normal(size=(4, 3))
    out = aggregate(Tensor(x), ClusterAssignment((-1, 0, 1, -1), 2)).data
    np.testing.assert_array_equal(out, x[1:3])


def test_identical_rows_mean(rng):
    row = rng.normal(size=3)
    x = np.stack([rng.normal(size=3), row, row, rng.normal(size=3)])
    np.testing.assert_allclose(aggregate(Tensor(x), ClusterAssignment((-1, 0, 0, -1), 1)).data[0], row, atol=1e-15)


def test_random_vs_loop_oracle(rng):
    x = rng.normal(size=(5, 3))
    a = ClusterAssignment((-1, 0, 0, 1, -1), 2)
    out = aggregate(Tensor(x), a).data
    for j in range(a.k):
        rows = [x[i] for i, o in enumerate(a.offsets) if o == j]
        np.testing.assert_allclose(out[j], sum(rows) / len(rows), atol=1e-12)


def test_length_mismatch(rng):
    with pytest.raises(ValueError):
        aggregate(Tensor(rng.normal(size=(3, 2))), ClusterAssignment((-1, 0, 0, -1), 1))


def test_mass_conservation(rng):
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    a = ClusterAssignment((-1, 0, 0, 1, 2, -1), 3)
    g = rng.normal(size=(3, 3))
    nx.backward((aggregate(x, a) * g).sum())
    np.testing.assert_allclose(x.grad.sum(axis=0), g.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(x.grad[1], g[0] / 2, atol=1e-15)
    assert (x.grad[0] == 0).all() and (x.grad[-1] == 0).all()


def test_batch_matches_single(rng):
    x = rng.normal(size=(2, 6, 3))
    a = [ClusterAssignment((-1, 0, 1, 1, -1), 2), ClusterAssignment((-1, 0, 1, 2, 3, -1), 4)]
    out, counts = aggregate_batch(Tensor(x), a)
    assert counts.tolist() == [2, 4] and out.shape == (2, 4, 3)
    np.testing.assert_allclose(out.data[0, :2], aggregate(Tensor(x[0, :5]), a[0]).data, atol=1e-15)
    np.testing.assert_allclose(out.data[1], aggregate(Tensor(x[1]), a[1]).data, atol=1e-15)
    assert (out.data[0, 2:] == 0).all()
