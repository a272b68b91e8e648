"""Distance/orientation feature vectors for related PoI pairs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .extract import Poi, RelationLexicon, RelationTriplet
from .geo import UndefinedBearingError, bearing, check_mode, geodesic_distance

logger = logging.getLogger(__name__)


class FeatureVector(NamedTuple):
    distance: float  # meters
    orientation: float  # degrees clockwise from north, [0, 360)


@dataclass
class FeatureSet:
    relation_index: int
    vectors: list[FeatureVector] = field(default_factory=list)
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.vectors)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vectors, dtype=float).reshape(-1, 2)


def feature_vector(a, b, mode: str = "geodesic") -> FeatureVector:
    """Features of the ordered pair a -> b; raises if the points coincide."""
    return FeatureVector(geodesic_distance(a, b, mode), bearing(a, b, mode))


class PairFeatures(TransformerMixin, BaseEstimator):
    """Map rows ``[lat_a, lon_a, lat_b, lon_b]`` to ``[distance, orientation]``."""

    def __init__(self, mode="geodesic"):
        self.mode = mode

    def fit(self, X=None, y=None):
        check_mode(self.mode)
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 4:
            raise ValueError(f"expected 4 columns, got {X.shape[1]}")
        return np.array([feature_vector(r[:2], r[2:], self.mode) for r in X]).reshape(-1, 2)


def build_feature_sets(triplets: Iterable[RelationTriplet], pois: Mapping[int, Poi] | Iterable[Poi],
                       mode: str = "geodesic"):
    """Per-relation feature sets plus the feature vector of every ordered pair.

    Returns ``(feature_sets, pair_features)``.  Relations with no surviving
    triplet are absent from ``feature_sets``.
    """
    check_mode(mode)
    by_id = pois if isinstance(pois, Mapping) else {p.id: p for p in pois}
    sets: dict[int, FeatureSet] = {}
    pair_features: dict[tuple[int, int], FeatureVector] = {}
    skipped = 0
    for t in triplets:
        key = (t.poi_a, t.poi_b)
        fv = pair_features.get(key)
        if fv is None:
            try:
                fv = feature_vector(by_id[t.poi_a].coords, by_id[t.poi_b].coords, mode)
            except UndefinedBearingError:
                skipped += 1
                continue
            pair_features[key] = fv
        fs = sets.setdefault(t.relation_index, FeatureSet(t.relation_index))
        fs.vectors.append(fv)
        fs.pairs.append(key)
    if skipped:
        logger.warning("skipped %d triplet(s) between coincident PoIs", skipped)
    return dict(sorted(sets.items())), pair_features


def write_feature_sets(path, feature_sets: Mapping[int, FeatureSet], lexicon: RelationLexicon):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation", "distance_m", "orientation_deg", "poi_a", "poi_b"])
        for k, fs in sorted(feature_sets.items()):
            for fv, (a, b) in zip(fs.vectors, fs.pairs):
                w.writerow([lexicon.relations[k], repr(fv.distance), repr(fv.orientation), a, b])


def read_feature_sets(path, lexicon: RelationLexicon) -> dict[int, FeatureSet]:
    sets: dict[int, FeatureSet] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            k = lexicon.index(row["relation"])
            fs = sets.setdefault(k, FeatureSet(k))
            fs.vectors.append(FeatureVector(float(row["distance_m"]), float(row["orientation_deg"])))
            fs.pairs.append((int(row["poi_a"]), int(row["poi_b"])))
    return dict(sorted(sets.items()))
