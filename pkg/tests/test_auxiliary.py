import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftcp import auxiliary as aux
from shiftcp import empirical as emp
from shiftcp.errors import ValidationError


def random_probs(r, m, k):
    return r.dirichlet(np.full(k, 0.5), size=m)


def test_score_matrix_validation():
    with pytest.raises(ValidationError):
        aux.ScoreMatrix(np.array([[0.1, 1.2]]))
    with pytest.raises(ValidationError):
        aux.ScoreMatrix(np.array([0.1, 0.2]))
    with pytest.raises(ValidationError):
        aux.ScoreMatrix(np.array([[0.1, 0.9]]), np.array([[0.5, 0.6]]))
    with pytest.raises(ValidationError):
        aux.ScoreMatrix(np.array([[0.1, 0.9]]), np.array([[0.5, 0.5]]))
    m = aux.ScoreMatrix.from_probs([[0.25, 0.75]])
    assert m.scores.tolist() == [[0.75, 0.25]]


def test_true_scores_rejects_bad_labels():
    m = aux.ScoreMatrix(np.array([[0.1, 0.9]]))
    with pytest.raises(ValidationError):
        m.true_scores([2])


def test_min_max_pair_example():
    pair = aux.min_max_pair(aux.ScoreMatrix(np.array([[0.1, 0.9], [0.3, 0.7]])))
    assert pair.lower.support.tolist() == [0.1, 0.3]
    assert pair.upper.support.tolist() == [0.7, 0.9]
    assert pair.kind == aux.MIN_MAX and pair.dominance_verified


def test_min_max_identical_columns_collapse():
    col = np.array([0.2, 0.5, 0.8])
    pair = aux.min_max_pair(aux.ScoreMatrix(np.column_stack([col, col])))
    np.testing.assert_array_equal(pair.lower.support, pair.upper.support)


def test_min_max_needs_two_classes():
    with pytest.raises(ValidationError):
        aux.min_max_pair(aux.ScoreMatrix(np.array([[0.3]])))


def test_min_max_kind_requires_dominance():
    d = emp.from_scores([0.5])
    with pytest.raises(ValidationError):
        aux.AuxiliaryPair(d, d, aux.MIN_MAX, False)


@given(st.integers(1, 30), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_sandwich_property(m, k, seed):
    r = np.random.default_rng(seed)
    mat = aux.ScoreMatrix(r.random((m, k)))
    labels = r.integers(0, k, m)
    q = aux.labeled_empirical(mat.true_scores(labels))
    pair = aux.min_max_pair(mat)
    assert emp.dominates(pair.upper, q, 0.0)
    assert emp.dominates(q, pair.lower, 0.0)
    assert emp.mean(pair.upper) >= emp.mean(pair.lower)


def test_min_max_permutation_invariant():
    r = np.random.default_rng(2)
    s = r.random((12, 5))
    base = aux.min_max_pair(aux.ScoreMatrix(s))
    perm = aux.min_max_pair(aux.ScoreMatrix(s[r.permutation(12)][:, r.permutation(5)]))
    np.testing.assert_array_equal(base.lower.support, perm.lower.support)
    np.testing.assert_array_equal(base.upper.support, perm.upper.support)


def test_f_u_one_hot_picks_argmax():
    probs = np.eye(4)[[2, 0, 3, 1, 1]]
    mat = aux.ScoreMatrix.from_probs(probs)
    pair = aux.f_u_pair(mat, seed=3)
    assert pair.lower.support.tolist() == [0.0] * 5


def test_f_u_deterministic():
    r = np.random.default_rng(4)
    mat = aux.ScoreMatrix.from_probs(random_probs(r, 30, 6))
    a, b = aux.f_u_pair(mat, 11), aux.f_u_pair(mat, 11)
    np.testing.assert_array_equal(a.lower.support, b.lower.support)
    np.testing.assert_array_equal(a.upper.support, b.upper.support)
    assert a.kind == aux.F_U


def test_f_u_requires_probabilities():
    with pytest.raises(ValidationError):
        aux.f_u_pair(aux.ScoreMatrix(np.array([[0.1, 0.9]])), 0)


def test_f_u_uniform_probs_equal_in_distribution():
    probs = np.full((50, 5), 0.2)
    gaps = []
    for seed in range(200):
        model_cls, uniform_cls = aux.draw_classes(probs, seed)
        gaps.append(uniform_cls.mean() - model_cls.mean())
    gaps = np.array(gaps)
    assert abs(gaps.mean()) <= 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)
    pair = aux.f_u_pair(aux.ScoreMatrix.from_probs(probs), 0)
    np.testing.assert_array_equal(pair.lower.support, pair.upper.support)


def test_model_class_sampler_frequencies():
    probs = np.tile([0.1, 0.6, 0.3], (20000, 1))
    model_cls, _ = aux.draw_classes(probs, 8)
    freq = np.bincount(model_cls, minlength=3) / model_cls.size
    np.testing.assert_allclose(freq, [0.1, 0.6, 0.3], atol=0.015)


def test_f_u_empirical_dominance_is_recorded():
    # a confident model puts the sampled class on low scores, so uniform draws dominate
    r = np.random.default_rng(6)
    logits = r.normal(size=(400, 10)) * 4
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    pair = aux.f_u_pair(aux.ScoreMatrix.from_probs(probs), 1)
    assert pair.dominance_verified == emp.dominates(pair.upper, pair.lower)
    assert emp.mean(pair.upper) > emp.mean(pair.lower)


def test_labeled_empirical():
    d = aux.labeled_empirical([0.2, 0.4])
    assert d.support.tolist() == [0.2, 0.4] and d.is_uniform
    with pytest.raises(ValidationError):
        aux.labeled_empirical([])


def test_custom_pair_records_dominance():
    lo, hi = emp.from_scores([0.1, 0.2]), emp.from_scores([0.6, 0.7])
    assert aux.custom_pair(lo, hi).dominance_verified
    assert not aux.custom_pair(hi, lo).dominance_verified
