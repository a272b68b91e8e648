"""Bayesian closeness scores for PoI pairs and the weighted relationship graph.

For a pair with observed relations R_ij and feature vector D_ij, each
observed relation k gets the posterior

    P(k | D_ij) = p(D_ij | k) P(k) / sum_l p(D_ij | l) P(l)

with P(k) the frequency of k in R_ij.  The closeness weight is

    W_ij = (1 / |lexicon|) * sum_{distinct k in R_ij} P(k | D_ij) / max_pairs P(k | D)

and the weighted graph has one undirected edge per related pair.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .extract import Poi, RelationLexicon, RelationTriplet
from .features import FeatureSet, FeatureVector, feature_vector
from .geo import UndefinedBearingError, geodesic_distance
from .mixture import EmConfig, GreedyGaussianMixture, MixtureModel, log_mixture_density

logger = logging.getLogger(__name__)


class DegeneratePosteriorError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PairObservation:
    poi_i: int
    poi_j: int
    relations: tuple[int, ...]  # multiset, sorted
    features: FeatureVector

    def __post_init__(self):
        if self.poi_i == self.poi_j:
            raise ValueError("pair needs two distinct PoIs")
        if not self.relations:
            raise ValueError("pair without observed relations")

    @property
    def key(self) -> tuple[int, int]:
        return (self.poi_i, self.poi_j)

    def distinct_relations(self) -> list[int]:
        return sorted(set(self.relations))


@dataclass(frozen=True)
class RelationshipEdge:
    poi_i: int
    poi_j: int
    w: float
    d_m: float
    relations: tuple[int, ...]


@dataclass
class RelationshipGraph:
    nodes: dict[int, Poi] = field(default_factory=dict)
    edges: list[RelationshipEdge] = field(default_factory=list)

    def __len__(self):
        return len(self.edges)

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = defaultdict(list)
        for e in self.edges:
            adj[e.poi_i].append((e.poi_j, e.d_m))
            adj[e.poi_j].append((e.poi_i, e.d_m))
        return adj

    def poi_ids(self) -> list[int]:
        """PoIs that carry at least one edge."""
        return sorted({i for e in self.edges for i in (e.poi_i, e.poi_j)})

    def subgraph(self, keep: Iterable[int]) -> "RelationshipGraph":
        keep = set(keep)
        return RelationshipGraph({i: p for i, p in self.nodes.items() if i in keep},
                                 [e for e in self.edges if e.poi_i in keep and e.poi_j in keep])


def collect_pairs(triplets: Iterable[RelationTriplet], pois: Mapping[int, Poi] | Iterable[Poi],
                  mode: str = "geodesic") -> list[PairObservation]:
    """Merge ordered triplets into unordered pairs.

    The pair's feature vector is taken in the (smaller id -> larger id)
    direction.  Pairs between coincident PoIs are dropped.
    """
    by_id = pois if isinstance(pois, Mapping) else {p.id: p for p in pois}
    grouped: dict[tuple[int, int], list[int]] = defaultdict(list)
    for t in triplets:
        grouped[(min(t.poi_a, t.poi_b), max(t.poi_a, t.poi_b))].append(t.relation_index)
    pairs = []
    for (i, j), rels in sorted(grouped.items()):
        try:
            fv = feature_vector(by_id[i].coords, by_id[j].coords, mode)
        except UndefinedBearingError:
            logger.warning("dropping pair (%d, %d): coincident coordinates", i, j)
            continue
        pairs.append(PairObservation(i, j, tuple(sorted(rels)), fv))
    return pairs


def relation_prior(pair: PairObservation, k: int) -> float:
    return pair.relations.count(k) / len(pair.relations)


def log_likelihood_of(model, x) -> float:
    """Log density of feature vector ``x`` under a fitted estimator or raw mixture."""
    x = np.asarray(x, dtype=float).reshape(1, 2)
    if isinstance(model, MixtureModel):
        return float(log_mixture_density(x, model)[0])
    return float(model.score_samples(x)[0])


def posteriors(pair: PairObservation, models: Mapping[int, object]) -> dict[int, float]:
    """Posterior of every distinct observed relation of the pair."""
    ks = pair.distinct_relations()
    missing = [k for k in ks if k not in models]
    if missing:
        raise KeyError(f"no trained model for relation(s) {missing}")
    log_num = np.array([log_likelihood_of(models[k], pair.features) + math.log(relation_prior(pair, k))
                        for k in ks])
    top = np.max(log_num)
    if not np.isfinite(top):
        raise DegeneratePosteriorError(f"all likelihoods vanish for pair {pair.key}")
    # shift by the max, then normalize in linear space
    post = np.exp(log_num - top)
    post /= post.sum()
    return dict(zip(ks, post.tolist()))


def posterior(pair: PairObservation, k: int, models: Mapping[int, object]) -> float:
    if k not in pair.relations:
        return 0.0
    return posteriors(pair, models)[k]


def global_max_posteriors(pairs: Iterable[PairObservation], models: Mapping[int, object],
                          scored: Mapping[tuple[int, int], dict[int, float]] | None = None
                          ) -> dict[int, float]:
    maxima: dict[int, float] = {}
    for pair in pairs:
        post = scored[pair.key] if scored is not None else posteriors(pair, models)
        for k, p in post.items():
            if p > maxima.get(k, -1.0):
                maxima[k] = p
    return dict(sorted(maxima.items()))


def closeness_score(pair: PairObservation, models: Mapping[int, object], maxima: Mapping[int, float],
                    n_relations: int, post: Mapping[int, float] | None = None) -> float:
    post = post if post is not None else posteriors(pair, models)
    total = sum(p / maxima[k] for k, p in post.items())
    return min(max(total / n_relations, 0.0), 1.0)


def restrict_to_models(pairs: Iterable[PairObservation], models: Mapping[int, object]
                       ) -> list[PairObservation]:
    """Drop observations of relations that have no trained model.

    Pairs left without any modelled relation are removed.
    """
    pairs = list(pairs)
    out = []
    for pair in pairs:
        rels = tuple(k for k in pair.relations if k in models)
        if rels:
            out.append(pair if len(rels) == len(pair.relations)
                       else PairObservation(pair.poi_i, pair.poi_j, rels, pair.features))
    if len(out) < len(pairs):
        logger.info("%d pair(s) lost all observations to untrained relations", len(pairs) - len(out))
    return out


def build_relationship_graph(pairs: Iterable[PairObservation], models: Mapping[int, object],
                             pois: Mapping[int, Poi] | Iterable[Poi], n_relations: int,
                             mode: str = "geodesic") -> RelationshipGraph:
    by_id = dict(pois) if isinstance(pois, Mapping) else {p.id: p for p in pois}
    pairs = list(pairs)
    scored = {p.key: posteriors(p, models) for p in pairs}
    maxima = global_max_posteriors(pairs, models, scored)
    graph = RelationshipGraph()
    for pair in pairs:
        w = closeness_score(pair, models, maxima, n_relations, scored[pair.key])
        a, b = by_id[pair.poi_i], by_id[pair.poi_j]
        graph.nodes.setdefault(a.id, a)
        graph.nodes.setdefault(b.id, b)
        graph.edges.append(RelationshipEdge(a.id, b.id, w, geodesic_distance(a.coords, b.coords, mode),
                                            pair.relations))
    return graph


def train_relation_models(feature_sets: Mapping[int, FeatureSet], config: EmConfig | None = None,
                          min_samples: int = 5, threads: int = 1):
    """One greedy mixture per relation with at least ``min_samples`` vectors.

    Returns ``(models, skipped)`` where ``skipped`` lists under-sampled
    relations.  Relations are independent, so ``threads > 1`` fits them
    concurrently with identical results.
    """
    config = config or EmConfig()
    todo, skipped = [], []
    for k, fs in sorted(feature_sets.items()):
        if len(fs) < min_samples:
            logger.warning("relation %d has %d sample(s) (< %d); not trained", k, len(fs), min_samples)
            skipped.append(k)
        else:
            todo.append((k, fs))

    def fit(item):
        k, fs = item
        est = GreedyGaussianMixture.from_config(config).fit(fs.as_array())
        est.model_.relation_index = k
        return k, est

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit, todo))
    else:
        fitted = [fit(item) for item in todo]
    return dict(fitted), skipped


def write_relationship_graph(path, graph: RelationshipGraph, lexicon: RelationLexicon):
    with open(path, "w", encoding="utf-8") as fh:
        for e in graph.edges:
            fh.write(json.dumps({"poi_i": e.poi_i, "poi_j": e.poi_j, "w": e.w, "d_m": e.d_m,
                                 "relations": [lexicon.relations[k] for k in e.relations]}) + "\n")


def read_relationship_graph(path, pois: Mapping[int, Poi] | Iterable[Poi],
                            lexicon: RelationLexicon) -> RelationshipGraph:
    by_id = dict(pois) if isinstance(pois, Mapping) else {p.id: p for p in pois}
    graph = RelationshipGraph()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            i, j = int(obj["poi_i"]), int(obj["poi_j"])
            graph.nodes[i], graph.nodes[j] = by_id[i], by_id[j]
            graph.edges.append(RelationshipEdge(i, j, float(obj["w"]), float(obj["d_m"]),
                                                tuple(lexicon.index(r) for r in obj["relations"])))
    return graph


def relation_histogram(triplets: Iterable[RelationTriplet]) -> Counter:
    return Counter(t.relation_index for t in triplets)
