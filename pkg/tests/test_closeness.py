import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdroute.closeness import (PairObservation, RelationshipGraph, build_relationship_graph,
                                  closeness_score, collect_pairs, global_max_posteriors,
                                  posterior, posteriors, read_relationship_graph, relation_prior,
                                  restrict_to_models, train_relation_models,
                                  write_relationship_graph)
from crowdroute.extract import Poi, RelationTriplet, default_lexicon
from crowdroute.features import FeatureSet, FeatureVector
from crowdroute.mixture import MixtureModel

from oracles import brute_force_closeness, gaussian_pdf

I2 = np.eye(2)


def pair(i, j, rels, fv=(100.0, 45.0)):
    return PairObservation(i, j, tuple(sorted(rels)), FeatureVector(*fv))


def gauss(mean, scale):
    return MixtureModel([1.0], [mean], [np.diag(scale) ** 2])


MODELS = {0: gauss((100.0, 90.0), (50.0, 60.0)), 1: gauss((400.0, 180.0), (150.0, 90.0)),
          2: MixtureModel([0.4, 0.6], [[50, 0], [300, 270]], [np.diag([900.0, 400.0]), np.diag([1e4, 2500.0])])}


def test_prior_is_multiset_frequency():
    p = pair(0, 1, [0, 0, 3])
    assert relation_prior(p, 0) == pytest.approx(2 / 3)
    assert relation_prior(p, 3) == pytest.approx(1 / 3)
    assert relation_prior(p, 5) == 0.0
    assert relation_prior(pair(0, 1, [2]), 2) == 1.0


def test_single_relation_posterior_is_one():
    assert posterior(pair(0, 1, [1]), 1, MODELS) == 1.0
    assert posterior(pair(0, 1, [1]), 0, MODELS) == 0.0


def test_symmetric_case_splits_evenly():
    same = {0: gauss((0.0, 0.0), (1.0, 1.0)), 1: gauss((0.0, 0.0), (1.0, 1.0))}
    post = posteriors(pair(0, 1, [0, 1], (0.5, 0.5)), same)
    assert post == {0: 0.5, 1: 0.5}


def test_missing_model_raises():
    with pytest.raises(KeyError):
        posteriors(pair(0, 1, [4]), MODELS)


def test_far_tail_does_not_underflow():
    # both likelihoods underflow in linear space; log space keeps the ratio
    post = posteriors(pair(0, 1, [0, 1], (1e5, 10.0)), MODELS)
    assert math.isclose(sum(post.values()), 1.0, abs_tol=1e-12)
    assert all(np.isfinite(v) for v in post.values())


def test_eq3_arithmetic():
    one = {0: gauss((0.0, 0.0), (1.0, 1.0))}
    p = pair(0, 1, [0])
    maxima = global_max_posteriors([p], one)
    assert closeness_score(p, one, maxima, 1) == 1.0
    assert closeness_score(p, one, maxima, 4) == 0.25


def test_maxima_cover_observed_relations_only():
    pairs = [pair(0, 1, [0]), pair(1, 2, [0, 1], (350.0, 170.0))]
    maxima = global_max_posteriors(pairs, MODELS)
    assert set(maxima) == {0, 1}
    for p in pairs:
        for k, v in posteriors(p, MODELS).items():
            assert v <= maxima[k]


def _likelihood(pairs_by_key):
    def lik(key, k):
        m = MODELS[k]
        x = pairs_by_key[key].features
        return sum(w * gaussian_pdf(x, mu, c) for w, mu, c in zip(m.weights, m.means, m.covariances))
    return lik


def test_three_pair_fixture_matches_oracle():
    pairs = [pair(0, 1, [0, 0, 1], (120.0, 80.0)), pair(0, 2, [0, 1], (300.0, 150.0)),
             pair(1, 2, [1], (500.0, 200.0))]
    by_key = {p.key: p for p in pairs}
    post, maxima, w = brute_force_closeness({p.key: list(p.relations) for p in pairs}, _likelihood(by_key), 6)
    assert global_max_posteriors(pairs, MODELS) == pytest.approx(maxima, abs=1e-12)
    for p in pairs:
        assert posteriors(p, MODELS) == pytest.approx(post[p.key], abs=1e-12)
        assert closeness_score(p, MODELS, maxima, 6) == pytest.approx(w[p.key], abs=1e-12)


observations = st.lists(st.tuples(st.floats(10, 1000), st.floats(0, 359.9),
                                  st.lists(st.integers(0, 2), min_size=1, max_size=5)),
                        min_size=1, max_size=12)


@settings(max_examples=80, deadline=None)
@given(observations)
def test_closeness_properties(obs):
    pairs = [pair(i, i + 100, rels, (d, o)) for i, (d, o, rels) in enumerate(obs)]
    maxima = global_max_posteriors(pairs, MODELS)
    by_key = {p.key: p for p in pairs}
    _, _, w_oracle = brute_force_closeness({p.key: list(p.relations) for p in pairs}, _likelihood(by_key), 6)
    for p in pairs:
        post = posteriors(p, MODELS)
        assert math.isclose(sum(post.values()), 1.0, abs_tol=1e-12)
        w = closeness_score(p, MODELS, maxima, 6)
        assert 0.0 <= w <= len(set(p.relations)) / 6 + 1e-12
        assert w == pytest.approx(w_oracle[p.key], abs=1e-9)


@given(st.floats(10, 800), st.floats(0, 359), st.floats(-50, 50))
def test_common_likelihood_shift_leaves_posteriors(d, o, shift):
    class Shifted:
        def __init__(self, m):
            self.m = m

        def score_samples(self, x):
            from crowdroute.mixture import log_mixture_density
            return log_mixture_density(x, self.m) + shift

    p = pair(0, 1, [0, 1, 1, 2], (d, o))
    shifted = {k: Shifted(m) for k, m in MODELS.items()}
    assert posteriors(p, shifted) == pytest.approx(posteriors(p, MODELS), abs=1e-12)


# --- pairs and graph --------------------------------------------------------------

POIS = {i: Poi(i, f"P{i}", *xy) for i, xy in enumerate([(0, 0), (0, 300), (400, 0), (400, 300), (0, 0)])}


def test_collect_pairs_merges_directions():
    trips = [RelationTriplet("d", 0, 1, 0, 0), RelationTriplet("d", 1, 0, 2, 1),
             RelationTriplet("d", 2, 2, 0, 3), RelationTriplet("d", 3, 0, 1, 4)]
    pairs = collect_pairs(trips, POIS, "planar")
    assert [p.key for p in pairs] == [(0, 1), (2, 3)]  # (0, 4) coincide and are dropped
    assert pairs[0].relations == (0, 2)
    # direction is taken from the smaller id
    assert pairs[0].features == FeatureVector(300.0, 90.0)


def test_figure_six_shape():
    keys = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    pairs = [pair(i, j, [k % 3], (100.0 + 50 * k, 30.0 * k)) for k, (i, j) in enumerate(keys)]
    g = build_relationship_graph(pairs, MODELS, POIS, 6, "planar")
    assert len(g.edges) == 6 and len(g.nodes) == 4
    assert g.edges[0].d_m == 300.0
    assert all(0 <= e.w <= 1 for e in g.edges)


def test_empty_graph():
    g = build_relationship_graph([], MODELS, POIS, 6)
    assert g.edges == [] and g.nodes == {}


def test_restrict_to_models_drops_unmodelled():
    pairs = [pair(0, 1, [0, 5]), pair(0, 2, [5, 5])]
    out = restrict_to_models(pairs, MODELS)
    assert [p.relations for p in out] == [(0,)]


def test_subgraph_and_adjacency():
    g = RelationshipGraph()
    pairs = [pair(0, 1, [0]), pair(1, 2, [1]), pair(2, 3, [0])]
    g = build_relationship_graph(pairs, MODELS, POIS, 6, "planar")
    sub = g.subgraph([1, 2, 3])
    assert [(e.poi_i, e.poi_j) for e in sub.edges] == [(1, 2), (2, 3)]
    adj = sub.adjacency()
    assert sorted(v for v, _ in adj[2]) == [1, 3]
    assert g.poi_ids() == [0, 1, 2, 3]


def test_graph_round_trip(tmp_path):
    lex = default_lexicon()
    pairs = [pair(0, 1, [0, 0, 3]), pair(1, 2, [1], (250.0, 10.0))]
    g = build_relationship_graph(pairs, {**MODELS, 3: MODELS[0]}, POIS, len(lex), "planar")
    write_relationship_graph(tmp_path / "h.jsonl", g, lex)
    back = read_relationship_graph(tmp_path / "h.jsonl", POIS, lex)
    assert back.edges == g.edges


def test_train_skips_small_relations():
    rng = np.random.default_rng(0)
    sets = {0: FeatureSet(0, [FeatureVector(*v) for v in rng.uniform(1, 300, (40, 2))]),
            1: FeatureSet(1, [FeatureVector(10.0, 20.0), FeatureVector(30.0, 40.0)])}
    models, skipped = train_relation_models(sets)
    assert list(models) == [0] and skipped == [1]
    assert models[0].model_.relation_index == 0
    threaded, _ = train_relation_models(sets, threads=2)
    assert np.array_equal(threaded[0].means_, models[0].means_)
