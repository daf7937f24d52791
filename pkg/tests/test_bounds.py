import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from shiftcp import auxiliary as aux
from shiftcp import bounds as bd
from shiftcp import empirical as emp
from shiftcp.density import fit_kde
from shiftcp.errors import ValidationError


def random_instance(seed, n=None, m=None, k=4):
    r = np.random.default_rng(seed)
    n = n or int(r.integers(2, 40))
    m = m or int(r.integers(2, 40))
    cal = r.beta(2, 5, n)
    mat = aux.ScoreMatrix(r.random((m, k)))
    labels = r.integers(0, k, m)
    return cal, mat, labels


@pytest.mark.parametrize("flavor", bd.FLAVORS)
@pytest.mark.parametrize("estimator", bd.ESTIMATORS)
def test_no_shift_gives_zero(flavor, estimator):
    p = emp.from_scores([0.1, 0.4, 0.4, 0.7])
    rep = bd.labeled_bound(p, p, fit_kde(p.support), flavor, estimator)
    assert rep.value == 0.0


def test_point_masses_w1_flavor():
    p, q = emp.from_scores([0.2]), emp.from_scores([0.9])
    rep = bd.labeled_bound(p, q, fit_kde([0.2], bandwidth=0.05), bd.W1)
    # 0.7 times the reflected Gaussian peak on the nearest grid point 102/511
    assert rep.value == pytest.approx(5.585020813947939, rel=1e-9)
    assert rep.display_value == 1.0
    assert rep.raw_value == rep.value


def test_grid_estimator_matches_cell_oracle():
    r = np.random.default_rng(1)
    for _ in range(5):
        p = emp.from_scores(r.random(7), r.random(7) + 0.1)
        q = emp.from_scores(r.random(5))
        lo, hi = emp.from_scores(r.random(6) * 0.5), emp.from_scores(0.5 + r.random(6) * 0.5)
        kde = fit_kde(p.support, p.weights, 0.1)
        dens = lambda t: oracles.reflected_density(kde.centers, kde.weights, 0.1, t)  # noqa: E731
        dists = [(p.support, p.weights), (q.support, q.weights)]
        ref = oracles.cell_integral(lambda f: abs(f[0] - f[1]), dists, 17, dens)
        assert bd.labeled_bound(p, q, kde, grid_size=17).value == pytest.approx(ref, rel=1e-10)
        dists = [(p.support, p.weights), (hi.support, hi.weights), (lo.support, lo.weights)]
        ref = oracles.cell_integral(
            lambda f: 0.5 * (abs(f[0] - f[1]) + abs(f[0] - f[2]) + f[2] - f[1]), dists, 17, dens
        )
        pair = aux.custom_pair(lo, hi)
        assert bd.unlabeled_bound(p, pair, kde, grid_size=17).value == pytest.approx(ref, rel=1e-10)


def test_expectation_estimator_matches_definition():
    r = np.random.default_rng(2)
    p = emp.from_scores(r.random(9), r.random(9) + 0.1)
    q = emp.from_scores(r.random(6))
    rep = bd.labeled_bound(p, q, fit_kde(p.support, p.weights), estimator=bd.EXPECTATION)
    ref = sum(
        w * abs(oracles.cdf(p.support, p.weights, s) - oracles.cdf(q.support, q.weights, s))
        for s, w in zip(p.support, p.weights)
    )
    assert rep.value == pytest.approx(ref, abs=1e-12)


def test_grid_converges_to_continuous_integral():
    # with a single atom per CDF the integrand is an indicator on [0.3, 0.6)
    p, q = emp.from_scores([0.3]), emp.from_scores([0.6])
    kde = fit_kde([0.3], bandwidth=0.2)
    from scipy.integrate import quad

    from shiftcp.density import density_at

    ref = quad(lambda t: density_at(kde, t), 0.3, 0.6)[0]
    assert bd.labeled_bound(p, q, kde, grid_size=4097).value == pytest.approx(ref, rel=1e-3)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_flavor_and_label_ordering(seed):
    cal, mat, labels = random_instance(seed)
    p = emp.from_scores(cal)
    kde = fit_kde(cal)
    q = aux.labeled_empirical(mat.true_scores(labels))
    pair = aux.min_max_pair(mat)
    lab_cdf = bd.labeled_bound(p, q, kde, bd.WEIGHTED_CDF).value
    lab_w1 = bd.labeled_bound(p, q, kde, bd.W1).value
    un_cdf = bd.unlabeled_bound(p, pair, kde, bd.WEIGHTED_CDF).value
    un_w1 = bd.unlabeled_bound(p, pair, kde, bd.W1).value
    assert lab_cdf <= lab_w1 + 1e-9
    assert un_cdf <= un_w1 + 1e-9
    assert lab_cdf <= un_cdf + 1e-9
    assert lab_w1 <= un_w1 + 1e-9


@pytest.mark.parametrize("flavor", bd.FLAVORS)
@pytest.mark.parametrize("estimator", bd.ESTIMATORS)
def test_collapse_pair_reproduces_labeled(flavor, estimator):
    r = np.random.default_rng(3)
    p = emp.from_scores(r.random(20))
    q = emp.from_scores(r.random(15))
    kde = fit_kde(p.support)
    lab = bd.labeled_bound(p, q, kde, flavor, estimator)
    un = bd.unlabeled_bound(p, aux.custom_pair(q, q), kde, flavor, estimator)
    assert un.value == lab.value


def test_unlabeled_at_least_mean_gap_term():
    cal, mat, _ = random_instance(4)
    p, kde, pair = emp.from_scores(cal), fit_kde(cal), aux.min_max_pair(mat)
    rep = bd.unlabeled_bound(p, pair, kde, bd.W1)
    assert rep.value >= 0.5 * rep.max_density * rep.components["mean_gap"] - 1e-12
    assert rep.components["pair_kind"] == aux.MIN_MAX


def test_unlabeled_rejects_inconsistent_pair():
    lo, hi = emp.from_scores([0.6]), emp.from_scores([0.1])
    bogus = aux.AuxiliaryPair(lo, hi, aux.CUSTOM, True)
    with pytest.raises(ValidationError):
        bd.unlabeled_bound(lo, bogus, fit_kde([0.6]))


def test_option_validation():
    p = emp.from_scores([0.5])
    kde = fit_kde([0.5])
    with pytest.raises(ValidationError):
        bd.labeled_bound(p, p, kde, grid_size=1)
    with pytest.raises(ValidationError):
        bd.labeled_bound(p, p, kde, flavor="tv")


def test_dkw_correct_example():
    rep = bd.BoundReport(0.10, bd.WEIGHTED_CDF, True, bd.GRID, 512, 1.0, 0.1, True, 0.10)
    out = bd.dkw_correct(rep, 200, 200, 0.05)
    # 0.10 + 2 sqrt(log(40) / 400)
    assert out.value == pytest.approx(0.29206455826398414, rel=1e-12)
    assert out.dkw["confidence"] == pytest.approx(0.9)
    assert out.dkw["resampled_size"] is None
    assert out.raw_value == 0.10
    huge = bd.dkw_correct(rep, 10**15, 10**15, 0.05)
    assert huge.value == pytest.approx(0.10, abs=1e-6)
    assert bd.dkw_correct(rep, 200, 200, 0.2).value < out.value


def test_dkw_correct_weighted_resamples():
    r = np.random.default_rng(5)
    cal = r.random(100)
    w = r.dirichlet(np.ones(100))
    p = emp.from_scores(cal, w)
    q = emp.from_scores(r.random(80))
    rep = bd.labeled_bound(p, q, fit_kde(cal, w))

    def rebound(sample):
        return bd.labeled_bound(sample, q, fit_kde(sample.support))

    out = bd.dkw_correct(rep, 100, 80, 0.05, weights=w, rebound=rebound, p=p, seed=3)
    n_eff = emp.effective_sample_size(w)
    assert out.dkw["calibration_band"]["n_effective"] == pytest.approx(n_eff)
    assert out.dkw["resampled_size"] == round(n_eff)
    assert out.value == pytest.approx(out.raw_value + emp.dkw_epsilon(n_eff, 0.05) + emp.dkw_epsilon(80, 0.05))
    same = bd.dkw_correct(rep, 100, 80, 0.05, weights=w, rebound=rebound, p=p, seed=3)
    assert same.value == out.value


def test_alpha_specific_bound_no_shift_and_determinism():
    p = emp.from_scores(np.linspace(0.05, 0.95, 50))
    pair = aux.custom_pair(p, p)
    val = bd.alpha_specific_bound(p, pair, 0.1, 50, 10**6, 10**6, 0.5, seed=1)
    assert val == pytest.approx(2 * emp.dkw_epsilon(10**6, 0.5), abs=1e-12)
    r = np.random.default_rng(6)
    q = aux.min_max_pair(aux.ScoreMatrix(r.random((30, 3))))
    a = bd.alpha_specific_bound(p, q, 0.1, 20, 50, 30, 0.05, seed=2)
    assert a == bd.alpha_specific_bound(p, q, 0.1, 20, 50, 30, 0.05, seed=2)


def test_alpha_specific_bound_validity():
    r = np.random.default_rng(7)
    hits = 0
    trials = 200
    for _ in range(trials):
        cal = r.beta(2, 5, 100)
        probs = r.dirichlet(np.full(4, 0.7), size=100)
        mat = aux.ScoreMatrix.from_probs(probs)
        labels = np.array([r.choice(4, p=row) for row in probs])
        true = mat.true_scores(labels)
        p = emp.from_scores(cal)
        bound = bd.alpha_specific_bound(p, aux.min_max_pair(mat), 0.1, 30, 100, 100, 0.05, seed=1)
        thr = emp.quantile(p, 0.9)
        gap = abs(np.mean(cal <= thr) - np.mean(true <= thr))
        hits += gap <= bound
    assert hits / trials >= 0.95


def test_total_gap_examples():
    cal = emp.from_scores([0.5])
    assert bd.total_gap_empirical(cal, np.full(10, 0.9)) == pytest.approx(0.5, abs=1e-12)
    r = np.random.default_rng(8)
    s = r.random(5000)
    assert bd.total_gap_empirical(emp.from_scores(s), s) <= 0.02
    with pytest.raises(ValidationError):
        bd.total_gap_empirical(cal, [])
    with pytest.raises(ValidationError):
        bd.total_gap_empirical(cal, [0.5], alpha_grid=[0.0, 0.5])


def test_total_gap_brute_force():
    r = np.random.default_rng(9)
    cal, test = r.random(40), r.random(30)
    grid = [0.05, 0.3, 0.77]
    ref = np.mean([abs((1 - a) - np.mean(test <= oracles.conformal_quantile(cal, 1 - a))) for a in grid])
    assert bd.total_gap_empirical(emp.from_scores(cal), test, grid) == pytest.approx(ref, abs=1e-15)


def test_report_serializes():
    p = emp.from_scores([0.1, 0.3])
    d = bd.labeled_bound(p, p, fit_kde(p.support)).to_dict()
    assert d["flavor"] == bd.WEIGHTED_CDF and d["display_value"] == 0.0
    assert math.isfinite(d["bandwidth"])
