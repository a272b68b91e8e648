import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.utils.estimator_checks import check_get_params_invariance, check_no_attributes_set_in_init

from crowdroute.mixture import (EmConfig, GaussianComponent, GreedyGaussianMixture, MixtureModel,
                                component_density, em_step, fit_em, floor_covariance, greedy_fit,
                                insert_component, log_likelihood, mixture_density, responsibilities)

from oracles import gaussian_pdf, mc_integral_bbox

EPS = 1e-6
I2 = np.eye(2)


def unit(mean=(0.0, 0.0)):
    return MixtureModel([1.0], [mean], [I2])


def assert_valid(model, floor=EPS):
    assert math.isclose(model.weights.sum(), 1.0, abs_tol=1e-9)
    assert np.all(model.weights > 0)
    for c in model.covariances:
        assert np.array_equal(c, c.T)
        vals = np.linalg.eigvalsh(c)
        # eigvalsh itself is only accurate to about eps * |largest eigenvalue|
        assert vals.min() >= floor - 16 * np.finfo(float).eps * vals.max()


# --- densities --------------------------------------------------------------------

def test_density_at_mean():
    assert component_density((0, 0), GaussianComponent(1.0, np.zeros(2), I2)) == pytest.approx(1 / (2 * math.pi))


def test_density_one_unit_away():
    val = component_density((1, 0), GaussianComponent(1.0, np.zeros(2), I2))
    assert val == pytest.approx(math.exp(-0.5) / (2 * math.pi), rel=1e-14)
    assert val == pytest.approx(0.09653, abs=1e-5)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 4), st.floats(0.1, 4), st.floats(-0.9, 0.9))
def test_density_matches_textbook_formula(x, y, sx, sy, rho):
    cov = np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])
    comp = GaussianComponent(1.0, np.array([0.3, -0.2]), cov)
    assert component_density((x, y), comp) == pytest.approx(gaussian_pdf((x, y), comp.mean, cov), rel=1e-9)
    # reflection through the mean
    assert component_density((x, y), comp) == pytest.approx(
        component_density((0.6 - x, -0.4 - y), comp), rel=1e-12)


def test_single_component_mixture_equals_component():
    m = MixtureModel([1.0], [[1.0, 2.0]], [[[2.0, 0.3], [0.3, 1.0]]])
    d = (0.5, 1.5)
    assert mixture_density(d, m) == pytest.approx(component_density(d, m.components[0]), rel=1e-14)


def test_identical_components_collapse():
    cov = [[2.0, 0.3], [0.3, 1.0]]
    two = MixtureModel([0.3, 0.7], [[1, 2], [1, 2]], [cov, cov])
    one = MixtureModel([1.0], [[1, 2]], [cov])
    assert mixture_density((0.0, 0.0), two) == pytest.approx(mixture_density((0.0, 0.0), one), rel=1e-14)


@given(arrays(float, (2,), elements=st.floats(-10, 10)))
def test_mixture_bounded_by_components(d):
    m = MixtureModel([0.2, 0.5, 0.3], [[0, 0], [3, 1], [-2, 4]],
                     [I2, [[2.0, 0.5], [0.5, 1.0]], 0.3 * I2])
    assert mixture_density(d, m) <= max(component_density(d, c) for c in m.components) * (1 + 1e-12)


def test_log_likelihood_closed_form_and_additivity():
    assert log_likelihood([[0.0, 0.0]], unit()) == pytest.approx(-math.log(2 * math.pi))
    assert log_likelihood([[0.0, 0.0]], unit()) == pytest.approx(-1.8379, abs=1e-4)
    X = np.random.default_rng(0).normal(size=(30, 2))
    assert log_likelihood(np.vstack([X, X]), unit()) == pytest.approx(2 * log_likelihood(X, unit()), rel=1e-14)
    with pytest.raises(ValueError):
        log_likelihood(np.empty((0, 2)), unit())


def test_far_point_stays_finite():
    assert np.isfinite(log_likelihood([[1e6, -1e6]], unit()))


# --- EM ---------------------------------------------------------------------------

def test_em_step_hand_computed():
    # ML fit of one Gaussian to {(0,0), (2,0)}: mean (1,0), variances 1 and 0 -> floored
    m = em_step([[0.0, 0.0], [2.0, 0.0]], unit((5.0, 5.0)), EPS)
    assert np.allclose(m.means, [[1.0, 0.0]], atol=0)
    assert np.allclose(m.covariances[0], [[1.0, 0.0], [0.0, EPS]], rtol=1e-12, atol=1e-18)
    assert m.weights.tolist() == [1.0]


def test_responsibilities_sum_to_one():
    m = MixtureModel([0.5, 0.5], [[0, 0], [4, 4]], [I2, I2])
    X = np.random.default_rng(1).normal(2, 3, (50, 2))
    assert np.allclose(responsibilities(X, m).sum(axis=1), 1.0, atol=1e-12)


def test_vanishing_component_removed():
    m = MixtureModel([0.5, 0.5], [[0, 0], [1e4, 1e4]], [I2, I2])
    X = np.random.default_rng(2).normal(size=(20, 2))
    out = em_step(X, m)
    assert out.n_components == 1
    assert_valid(out)


def test_floor_covariance_clips_eigenvalues():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    out = floor_covariance(cov, 0.01)
    assert np.linalg.eigvalsh(out).min() == pytest.approx(0.01)
    assert np.linalg.eigvalsh(out).max() == pytest.approx(2.0)
    good = np.array([[2.0, 0.1], [0.1, 1.0]])
    assert np.array_equal(floor_covariance(good, 0.01), good)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 60))
def test_em_monotone_and_valid(seed, m, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n, 2)) * rng.uniform(0.1, 5, 2) + rng.choice([0.0, 6.0], (n, 1))
    model = MixtureModel(np.full(m, 1 / m), X[rng.choice(n, m)], np.repeat(I2[None], m, axis=0))
    prev = log_likelihood(X, model)
    for _ in range(15):
        model = em_step(X, model)
        assert_valid(model)
        cur = log_likelihood(X, model)
        assert cur >= prev - 1e-9 * max(1.0, abs(prev))
        prev = cur


def test_converged_model_stops_after_one_step():
    X = np.random.default_rng(4).normal(size=(200, 2))
    model, _ = fit_em(X, unit())
    _, trace = fit_em(X, model)
    assert len(trace) == 2


def test_two_cluster_recovery(bimodal):
    X, a, b = bimodal
    start = MixtureModel([0.5, 0.5], [[1.0, 1.0], [9.0, 9.0]], [I2, I2])
    model, trace = fit_em(X, start)
    means = model.means[np.argsort(model.means[:, 0])]
    assert np.abs(means[0] - a.mean(axis=0)).max() < 0.5
    assert np.abs(means[1] - b.mean(axis=0)).max() < 0.5
    assert all(y >= x - 1e-9 * abs(x) for x, y in zip(trace, trace[1:]))


# --- greedy growth ------------------------------------------------------------------

def test_single_point_dataset():
    m = greedy_fit([[3.0, 4.0]])
    assert m.n_components == 1
    assert_valid(m)


def test_bimodal_grows_to_two(bimodal):
    X, a, b = bimodal
    res = greedy_fit(X, EmConfig(seed=0), return_details=True)
    assert res.model.n_components == 2
    one = greedy_fit(X, EmConfig(max_components=1))
    assert res.model.log_likelihood > one.log_likelihood
    ll = res.accepted_log_likelihoods
    assert all(y > x for x, y in zip(ll, ll[1:]))


def test_insert_component_shapes():
    X = np.random.default_rng(5).normal(size=(40, 2))
    m = insert_component(X, unit(), EPS)
    assert m.n_components == 2
    assert m.weights.tolist() == [0.5, 0.5]
    worst = np.argmax(np.sum(X ** 2, axis=1))
    assert np.array_equal(m.means[1], X[worst])


def test_likelihood_rule_accepts_more_components(bimodal):
    X, _, _ = bimodal
    lenient = greedy_fit(X, EmConfig(stopping="likelihood", max_components=4))
    assert 2 <= lenient.n_components <= 4


def test_min_support_blocks_point_spikes():
    X = np.random.default_rng(6).normal(size=(19, 2))
    spiky = greedy_fit(X, EmConfig(stopping="likelihood", min_support=0.0))
    guarded = greedy_fit(X, EmConfig(stopping="likelihood"))
    assert 19 * guarded.weights.min() >= 3.0
    assert spiky.n_components >= guarded.n_components


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80), st.integers(1, 5))
def test_greedy_invariants(seed, n, cap):
    X = np.random.default_rng(seed).normal(0, 2, (n, 2))
    res = greedy_fit(X, EmConfig(max_components=cap, seed=seed), return_details=True)
    assert 1 <= res.model.n_components <= cap
    assert_valid(res.model)
    ll = res.accepted_log_likelihoods
    assert all(y > x for x, y in zip(ll, ll[1:]))


def test_greedy_deterministic(bimodal):
    X, _, _ = bimodal
    a, b = greedy_fit(X, EmConfig(seed=3)), greedy_fit(X, EmConfig(seed=3))
    for f in ("weights", "means", "covariances"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_config_validation():
    for bad in ({"max_components": 0}, {"covariance_floor": 0.0}, {"stopping": "aic"},
                {"n_candidates": -1}, {"min_support": -1.0}):
        with pytest.raises(ValueError):
            EmConfig(**bad)


# --- estimator ------------------------------------------------------------------

@pytest.fixture(scope="module")
def raw_data():
    rng = np.random.default_rng(8)
    near = np.column_stack([rng.gamma(4, 60, 150), rng.uniform(0, 360, 150)])
    far = np.column_stack([rng.normal(900, 80, 100), rng.normal(90, 20, 100)])
    return np.vstack([near, far])


def test_estimator_api(raw_data):
    est = GreedyGaussianMixture(random_state=1)
    assert clone(est).get_params() == est.get_params()
    check_get_params_invariance("GreedyGaussianMixture", est)
    check_no_attributes_set_in_init("GreedyGaussianMixture", est)
    est.fit(raw_data)
    assert est.n_components_ == len(est.weights_)
    proba = est.predict_proba(raw_data)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert np.array_equal(est.predict(raw_data), proba.argmax(axis=1))
    assert est.score(raw_data) == pytest.approx(np.mean(est.score_samples(raw_data)))
    with pytest.raises(ValueError):
        est.fit(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        GreedyGaussianMixture().fit(np.array([[np.nan, 1.0]]))


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        GreedyGaussianMixture().score_samples(np.zeros((1, 2)))


def test_raw_units_density_matches_components(raw_data):
    est = GreedyGaussianMixture(random_state=1).fit(raw_data)
    comps = est.raw_components()
    x = raw_data[:20]
    expected = [math.log(sum(c.weight * gaussian_pdf(p, c.mean, c.cov) for c in comps)) for p in x]
    assert np.allclose(est.score_samples(x), expected, rtol=1e-9)


def test_raw_density_integrates_to_one(raw_data):
    est = GreedyGaussianMixture(random_state=1).fit(raw_data)
    total = mc_integral_bbox(est.score_samples, est.raw_components(), 10**6, np.random.default_rng(0))
    assert total == pytest.approx(1.0, rel=0.02)


def test_standardization_off_matches_plain_greedy(bimodal):
    X, _, _ = bimodal
    est = GreedyGaussianMixture(standardize=False, random_state=0).fit(X)
    plain = greedy_fit(X, EmConfig(seed=0))
    assert np.allclose(est.means_, plain.means)
    assert np.allclose(est.score_samples(X[:5]), np.log(mixture_density(X[:5], plain)))


def test_json_round_trip(tmp_path, raw_data):
    est = GreedyGaussianMixture(random_state=2).fit(raw_data)
    est.model_.relation_index = 3
    est.save(tmp_path / "m.json", "near")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["relation"] == "near"
    assert {"standardization", "components", "log_likelihood"} <= set(data)
    back = GreedyGaussianMixture.load(tmp_path / "m.json")
    for f in ("weights_", "means_", "covariances_", "center_", "scale_"):
        np.testing.assert_allclose(getattr(back, f), getattr(est, f), rtol=1e-15, atol=0)
    assert back.model_.relation_index == 3
    assert back.get_params() == est.get_params()
    np.testing.assert_allclose(back.score_samples(raw_data), est.score_samples(raw_data), rtol=1e-15)
