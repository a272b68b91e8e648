"""Photo-based popularity, start/target sampling and the two experiment protocols."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .closeness import RelationshipGraph
from .geo import EARTH_RADIUS_M, distances_from, haversine
from .network import Path, RoadGraph, enrich, map_pois, pair_paths
from .routing import DEFAULT_BETA, RouteResult, dij_g, dij_g_star, dij_h_star

logger = logging.getLogger(__name__)

SETTING_I_BOUNDS = (0.3, 0.5)
DEFAULT_BRACKETS = ((0.1, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5), (0.5, 0.6))
DEFAULT_ALPHAS = (0.2, 0.4, 0.6, 0.8, 1.0)
MAX_DRAWS = 1_000_000
ALGORITHMS = ("dij_g", "dij_g_star", "dij_h_star")

SUMMARY_COLUMNS = ["setting", "parameter", "algorithm", "n_pairs", "n_fallback",
                   "mean_delta_length_pct", "mean_delta_popularity_pct", "n_popularity",
                   "mean_enrichment_gain_pct", "mean_er", "flag"]


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Photo:
    id: str
    latitude: float
    longitude: float


@dataclass
class PopularityIndex:
    counts: dict[int, int] = field(default_factory=dict)
    radius: float = 20.0

    def __getitem__(self, vertex: int) -> int:
        return self.counts.get(vertex, 0)

    def max(self) -> int:
        return max(self.counts.values(), default=0)


@dataclass
class ExperimentConfig:
    setting: str = "i"
    n_pairs: int = 100
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    beta: float = DEFAULT_BETA
    extent_bounds: tuple[float, float] = SETTING_I_BOUNDS
    brackets: tuple[tuple[float, float], ...] = DEFAULT_BRACKETS
    full_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.setting not in ("i", "ii"):
            raise ValueError(f"setting must be 'i' or 'ii', got {self.setting!r}")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be positive")
        for lo, hi in (self.extent_bounds, *self.brackets):
            if not 0 < lo < hi < 1:
                raise ValueError(f"extent fractions must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")
        ordered = sorted(self.brackets)
        if any(a[1] > b[0] for a, b in zip(ordered, ordered[1:])):
            raise ValueError("distance brackets overlap")
        if any(not 0 <= a <= 1 for a in (*self.alphas, self.full_alpha)):
            raise ValueError("alphas must lie in [0, 1]")


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)


# --- popularity ------------------------------------------------------------

def read_photos(path) -> list[Photo]:
    photos = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#") or row[0] == "id":
                continue
            photos.append(Photo(row[0], float(row[1]), float(row[2])))
    return photos


def write_photos(path, photos: Iterable[Photo]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "lat", "lon"])
        for p in photos:
            w.writerow([p.id, repr(p.latitude), repr(p.longitude)])


def _cell_sizes(graph: RoadGraph, pts: np.ndarray, radius: float) -> tuple[float, float]:
    if graph.mode == "planar":
        return radius, radius
    deg = EARTH_RADIUS_M * math.pi / 180.0
    max_lat = min(float(np.max(np.abs(np.vstack([graph.coords, pts])[:, 0]))), 89.0)
    # small slack keeps every in-radius neighbour within the 3x3 block
    return 1.01 * radius / deg, 1.01 * radius / (deg * math.cos(math.radians(max_lat)))


def build_popularity_index(photos: Sequence[Photo], graph: RoadGraph, radius: float = 20.0
                           ) -> PopularityIndex:
    """Credit every vertex within ``radius`` meters of each photo.

    Vertices are bucketed on a grid with ``radius``-sized cells, so each
    photo only checks the 3x3 block of cells around it.
    """
    index = PopularityIndex({v: 0 for v in graph.vertex_ids}, radius)
    if not photos or graph.n_vertices == 0:
        return index
    pts = np.array([(p.latitude, p.longitude) for p in photos], dtype=float)
    cy, cx = _cell_sizes(graph, pts, radius)
    buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, (a, b) in enumerate(graph.coords):
        buckets[(math.floor(a / cy), math.floor(b / cx))].append(i)
    for a, b in pts:
        ka, kb = math.floor(a / cy), math.floor(b / cx)
        cand = [i for da in (-1, 0, 1) for db in (-1, 0, 1) for i in buckets.get((ka + da, kb + db), ())]
        if not cand:
            continue
        d = distances_from((a, b), graph.coords[cand], graph.mode)
        for i, dist in zip(cand, d):
            if dist <= radius:
                index.counts[graph.vertex_ids[i]] += 1
    return index


def path_popularity(path: Path | Sequence[int], index: PopularityIndex) -> int:
    """Sum of vertex popularity, each distinct vertex counted once."""
    vertices = path.vertices if isinstance(path, Path) else path
    return sum(index[v] for v in set(vertices))


# --- sampling --------------------------------------------------------------

def sample_pairs(graph: RoadGraph, n_pairs: int, bounds: tuple[float, float],
                 rng: np.random.Generator, strict: bool = True) -> list[tuple[int, int]]:
    """Distinct (s, t) vertex pairs whose straight-line distance lies within
    ``bounds`` (fractions of the network extent).

    Draws uniformly with rejection, at most 10^6 candidate pairs.  With
    ``strict=False`` a shortfall returns what was found instead of raising.
    """
    extent = graph.extent()
    lo, hi = bounds[0] * extent, bounds[1] * extent
    n = graph.n_vertices
    found: list[tuple[int, int]] = []
    seen = set()
    draws = 0
    while len(found) < n_pairs and draws < MAX_DRAWS and n > 1:
        batch = min(10_000, MAX_DRAWS - draws)
        si = rng.integers(0, n, size=batch)
        ti = rng.integers(0, n, size=batch)
        draws += batch
        if graph.mode == "planar":
            d = np.hypot(*(graph.coords[si] - graph.coords[ti]).T)
        else:
            d = haversine(graph.coords[si, 0], graph.coords[si, 1], graph.coords[ti, 0], graph.coords[ti, 1])
        for a, b, dist in zip(si.tolist(), ti.tolist(), d.tolist()):
            if a != b and lo <= dist <= hi and (a, b) not in seen:
                seen.add((a, b))
                found.append((graph.vertex_ids[a], graph.vertex_ids[b]))
                if len(found) == n_pairs:
                    break
    if len(found) < n_pairs:
        msg = (f"found {len(found)}/{n_pairs} pairs at {bounds[0]:.0%}-{bounds[1]:.0%} of the "
               f"{extent:.0f} m extent after {draws} draws")
        if strict:
            raise SamplingExhaustedError(msg)
        logger.warning(msg)
    return found


# --- metrics ---------------------------------------------------------------

def enrichment_gain(baseline_er: float, candidate_er: float) -> float:
    """Percent reduction of the enrichment ratio relative to the baseline."""
    if not 0 < baseline_er <= 1:
        raise ValueError(f"baseline enrichment ratio must lie in (0, 1], got {baseline_er}")
    return (baseline_er - candidate_er) / baseline_er * 100.0


def _pct(value: float, base: float) -> float | None:
    if base == 0:
        return None
    return (value - base) / base * 100.0


def _row(setting, parameter, pair_index, s, t, res: RouteResult, base: RouteResult,
         index: PopularityIndex) -> dict:
    pop = path_popularity(res.path, index)
    pop_base = path_popularity(base.path, index)
    return {
        "setting": setting, "parameter": parameter, "pair_index": pair_index, "s": s, "t": t,
        "algorithm": res.algorithm, "d_m": res.length, "d_base_m": base.length,
        "delta_length_pct": _pct(res.length, base.length),
        "popularity": pop, "popularity_base": pop_base,
        "delta_popularity_pct": _pct(pop, pop_base),
        "er": res.er, "er_base": base.er,
        "enrichment_gain_pct": enrichment_gain(base.er, res.er),
        "fallback": res.fallback, "pois": res.pois,
    }


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def summarize(rows: Sequence[dict], setting: str, parameters: Sequence, flags: Mapping | None = None
              ) -> list[dict]:
    grouped: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        grouped[(r["parameter"], r["algorithm"])].append(r)
    out = []
    for p in parameters:
        for alg in ALGORITHMS:
            rs = grouped.get((p, alg), [])
            out.append({
                "setting": setting, "parameter": p, "algorithm": alg, "n_pairs": len(rs),
                "n_fallback": sum(r["fallback"] for r in rs),
                "mean_delta_length_pct": _mean(r["delta_length_pct"] for r in rs),
                "mean_delta_popularity_pct": _mean(r["delta_popularity_pct"] for r in rs),
                "n_popularity": sum(r["delta_popularity_pct"] is not None for r in rs),
                "mean_enrichment_gain_pct": _mean(r["enrichment_gain_pct"] for r in rs),
                "mean_er": _mean(r["er"] for r in rs),
                "flag": (flags or {}).get(p, ""),
            })
    return out


def _evaluate_pairs(setting, parameter, pairs, enriched, relationship_graph, index, beta, rows):
    for n, (s, t) in enumerate(pairs):
        base = dij_g(enriched, s, t)
        rows.append(_row(setting, parameter, n, s, t, base, base, index))
        for res in (dij_g_star(enriched, s, t), dij_h_star(enriched, relationship_graph, s, t, beta)):
            rows.append(_row(setting, parameter, n, s, t, res, base, index))


def _prepare(graph, relationship_graph, poi_vertex):
    if poi_vertex is None:
        poi_vertex = map_pois(relationship_graph.nodes.values(), graph)
    return poi_vertex, pair_paths(graph, relationship_graph, poi_vertex)


def run_setting_i(graph: RoadGraph, relationship_graph: RelationshipGraph, index: PopularityIndex,
                  config: ExperimentConfig, poi_vertex: Mapping[int, int] | None = None) -> MetricsReport:
    """Sweep alpha over one fixed sample of start/target pairs."""
    rng = np.random.default_rng(config.seed)
    pairs = sample_pairs(graph, config.n_pairs, config.extent_bounds, rng)
    poi_vertex, paths = _prepare(graph, relationship_graph, poi_vertex)
    report = MetricsReport()
    for alpha in config.alphas:
        enriched = enrich(graph, relationship_graph, alpha, poi_vertex, paths)
        _evaluate_pairs("i", alpha, pairs, enriched, relationship_graph, index, config.beta, report.rows)
    report.summary = summarize(report.rows, "i", list(config.alphas))
    return report


def bracket_label(bracket: tuple[float, float]) -> str:
    return f"{round(bracket[0] * 100)}-{round(bracket[1] * 100)}%"


def run_setting_ii(graph: RoadGraph, relationship_graph: RelationshipGraph, index: PopularityIndex,
                   config: ExperimentConfig, poi_vertex: Mapping[int, int] | None = None) -> MetricsReport:
    """Full-weight enrichment, pairs drawn per distance bracket.

    Brackets that cannot supply ``n_pairs`` pairs are flagged in the summary.
    """
    rng = np.random.default_rng(config.seed)
    poi_vertex, paths = _prepare(graph, relationship_graph, poi_vertex)
    enriched = enrich(graph, relationship_graph, config.full_alpha, poi_vertex, paths)
    report = MetricsReport()
    flags, labels = {}, []
    for bracket in config.brackets:
        label = bracket_label(bracket)
        labels.append(label)
        pairs = sample_pairs(graph, config.n_pairs, bracket, rng, strict=False)
        if not pairs:
            flags[label] = "no_pairs"
        elif len(pairs) < config.n_pairs:
            flags[label] = "incomplete"
        _evaluate_pairs("ii", label, pairs, enriched, relationship_graph, index, config.beta, report.rows)
    report.summary = summarize(report.rows, "ii", labels, flags)
    return report


def run_experiment(graph, relationship_graph, index, config: ExperimentConfig, poi_vertex=None) -> MetricsReport:
    run = run_setting_i if config.setting == "i" else run_setting_ii
    return run(graph, relationship_graph, index, config, poi_vertex)


def write_report(report: MetricsReport, csv_path, jsonl_path):
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in report.summary:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in SUMMARY_COLUMNS})
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for row in report.rows:
            fh.write(json.dumps(row) + "\n")

