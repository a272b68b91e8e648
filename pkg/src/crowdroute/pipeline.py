"""File-based pipeline stages and the run manifest.

Each stage reads its inputs from disk and writes its outputs under the
configured output directory, so stages can run one at a time from the
command line or back to back through :func:`run_all`.

Output layout::

    out/triplets.jsonl   out/pois.tsv        out/features.csv
    out/models/<relation>.json               out/hstar.jsonl
    out/enriched.tsv     out/routes.jsonl    out/report_<setting>.csv/.jsonl
"""

from __future__ import annotations

import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import closeness, evaluation, extract, features, network, routing
from .geo import MODES
from .mixture import EmConfig, GreedyGaussianMixture

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

PATH_KEYS = ("gazetteer", "corpus", "lexicon", "verbs", "nodes", "edges", "photos", "output")


class ConfigError(ValueError):
    """Bad manifest, bad flag value or a missing input file."""


@dataclass
class PipelinePaths:
    gazetteer: Path | None = None
    corpus: Path | None = None
    lexicon: Path | None = None  # bundled relation list when unset
    verbs: Path | None = None
    nodes: Path | None = None
    edges: Path | None = None
    photos: Path | None = None
    output: Path = Path("out")


@dataclass
class PipelineConfig:
    paths: PipelinePaths = field(default_factory=PipelinePaths)
    mode: str = "geodesic"
    alpha: float = 0.5
    beta: float = routing.DEFAULT_BETA
    seed: int = 0
    threads: int = 1
    min_samples: int = 5
    photo_radius: float = 20.0
    em: EmConfig = field(default_factory=EmConfig)
    experiment: evaluation.ExperimentConfig = field(default_factory=evaluation.ExperimentConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta > 1.0:
            raise ConfigError(f"beta must exceed 1, got {self.beta}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.min_samples < 1:
            raise ConfigError("min_samples must be at least 1")
        if not self.photo_radius > 0:
            raise ConfigError("photo_radius must be positive")

    # output locations
    @property
    def out(self) -> Path:
        return Path(self.paths.output)

    def output(self, name: str) -> Path:
        return self.out / name

    def require(self, *keys: str) -> list[Path]:
        """The named input paths; raises ConfigError if unset or absent."""
        found = []
        for key in keys:
            p = getattr(self.paths, key)
            if p is None:
                raise ConfigError(f"no {key} path configured")
            if not Path(p).exists():
                raise ConfigError(f"{key} not found: {p}")
            found.append(Path(p))
        return found

    def require_output(self, name: str) -> Path:
        p = self.output(name)
        if not p.exists():
            raise ConfigError(f"{p} not found; run the stage that produces it first")
        return p


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, list) else v


def load_manifest(path) -> dict:
    """Parse a TOML manifest into keyword overrides; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    out: dict = {}
    for key, val in raw.items():
        if key == "paths":
            unknown = set(val) - set(PATH_KEYS)
            if unknown:
                raise ConfigError(f"unknown path key(s): {sorted(unknown)}")
            out["paths"] = {k: base / v for k, v in val.items()}
        elif key in ("em", "experiment"):
            out[key] = {k: _tuple(v) for k, v in val.items()}
        else:
            out[key] = val
    return out


def build_config(manifest: dict | None = None, **overrides) -> PipelineConfig:
    """Merge manifest values with overrides (``None`` overrides are ignored).

    Path overrides go in ``overrides["paths"]``.  The global seed also seeds
    EM and pair sampling unless those sections set their own.
    """
    merged: dict = {}
    for src in (manifest or {}, {k: v for k, v in overrides.items() if v is not None}):
        for key, val in src.items():
            if key in ("paths", "em", "experiment"):
                merged.setdefault(key, {}).update({k: v for k, v in val.items() if v is not None})
            else:
                merged[key] = val
    top = {f.name for f in fields(PipelineConfig)}
    unknown = set(merged) - top
    if unknown:
        raise ConfigError(f"unknown setting(s): {sorted(unknown)}")
    seed = int(merged.get("seed", 0))
    try:
        paths = PipelinePaths(**{k: Path(v) for k, v in merged.pop("paths", {}).items()})
        em = EmConfig(**{"seed": seed, **merged.pop("em", {})})
        exp = evaluation.ExperimentConfig(**{"seed": seed, "beta": merged.get("beta", routing.DEFAULT_BETA),
                                             **merged.pop("experiment", {})})
        return PipelineConfig(paths=paths, em=em, experiment=exp, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --- shared loaders ------------------------------------------------------------

def lexicon(cfg: PipelineConfig) -> extract.RelationLexicon:
    if cfg.paths.lexicon is None:
        return extract.default_lexicon()
    (rel,) = cfg.require("lexicon")
    verbs = cfg.require("verbs")[0] if cfg.paths.verbs is not None else None
    return extract.load_lexicon(rel, verbs)


def road_graph(cfg: PipelineConfig) -> network.RoadGraph:
    nodes, edges = cfg.require("nodes", "edges")
    return network.load_graph(nodes, edges, cfg.mode)


def model_path(cfg: PipelineConfig, relation: str) -> Path:
    return cfg.output("models") / (relation.replace(" ", "_") + ".json")


def load_models(cfg: PipelineConfig, lex: extract.RelationLexicon) -> dict[int, GreedyGaussianMixture]:
    models = {}
    for k, rel in enumerate(lex.relations):
        p = model_path(cfg, rel)
        if p.exists():
            models[k] = GreedyGaussianMixture.load(p)
    if not models:
        raise ConfigError(f"no models under {cfg.output('models')}; run train first")
    return models


def relationship_graph(cfg: PipelineConfig, lex=None) -> closeness.RelationshipGraph:
    lex = lex or lexicon(cfg)
    pois = extract.read_pois(cfg.require_output("pois.tsv"))
    return closeness.read_relationship_graph(cfg.require_output("hstar.jsonl"), pois, lex)


# --- stages ------------------------------------------------------------------

@dataclass
class ExtractResult:
    triplets: list
    pois: list
    histogram: dict[str, int]


def run_extract(cfg: PipelineConfig) -> ExtractResult:
    gaz_path, corpus_path = cfg.require("gazetteer", "corpus")
    lex = lexicon(cfg)
    gaz = extract.load_gazetteer(gaz_path, check_bounds=cfg.mode == "geodesic")
    triplets = extract.extract_corpus(corpus_path, gaz, lex, threads=cfg.threads)
    pois = extract.used_pois(triplets, gaz)
    cfg.out.mkdir(parents=True, exist_ok=True)
    extract.write_triplets(cfg.output("triplets.jsonl"), triplets, lex)
    extract.write_pois(cfg.output("pois.tsv"), pois)
    counts = Counter(t.relation_index for t in triplets)
    hist = {rel: counts.get(k, 0) for k, rel in enumerate(lex.relations)}
    return ExtractResult(triplets, pois, hist)


def run_features(cfg: PipelineConfig) -> dict:
    lex = lexicon(cfg)
    triplets = extract.read_triplets(cfg.require_output("triplets.jsonl"), lex)
    pois = extract.read_pois(cfg.require_output("pois.tsv"))
    sets, _ = features.build_feature_sets(triplets, pois, cfg.mode)
    features.write_feature_sets(cfg.output("features.csv"), sets, lex)
    return sets


@dataclass
class TrainResult:
    models: dict
    skipped: list[str]


def run_train(cfg: PipelineConfig) -> TrainResult:
    lex = lexicon(cfg)
    sets = features.read_feature_sets(cfg.require_output("features.csv"), lex)
    models, skipped = closeness.train_relation_models(sets, cfg.em, cfg.min_samples, cfg.threads)
    mdir = cfg.output("models")
    mdir.mkdir(parents=True, exist_ok=True)
    for stale in mdir.glob("*.json"):
        stale.unlink()
    for k, est in models.items():
        est.save(model_path(cfg, lex.relations[k]), lex.relations[k])
    return TrainResult(models, [lex.relations[k] for k in skipped])


@dataclass
class ScoreResult:
    graph: closeness.RelationshipGraph
    quantiles: dict[str, float]


def run_score(cfg: PipelineConfig) -> ScoreResult:
    lex = lexicon(cfg)
    triplets = extract.read_triplets(cfg.require_output("triplets.jsonl"), lex)
    pois = extract.read_pois(cfg.require_output("pois.tsv"))
    models = load_models(cfg, lex)
    pairs = closeness.restrict_to_models(closeness.collect_pairs(triplets, pois, cfg.mode), models)
    graph = closeness.build_relationship_graph(pairs, models, pois, len(lex), cfg.mode)
    closeness.write_relationship_graph(cfg.output("hstar.jsonl"), graph, lex)
    ws = np.array([e.w for e in graph.edges])
    qs = {}
    if ws.size:
        for q in (0.0, 0.25, 0.5, 0.75, 1.0):
            qs[f"q{int(q * 100)}"] = float(np.quantile(ws, q))
    return ScoreResult(graph, qs)


def _enriched(cfg: PipelineConfig, graph, h):
    poi_vertex = network.map_pois(h.nodes.values(), graph)
    return network.enrich(graph, h, cfg.alpha, poi_vertex)


def run_enrich(cfg: PipelineConfig) -> network.EnrichedGraph:
    graph = road_graph(cfg)
    enriched = _enriched(cfg, graph, relationship_graph(cfg))
    network.write_enriched(cfg.output("enriched.tsv"), enriched)
    return enriched


def run_route(cfg: PipelineConfig, source: int, target: int, algorithms=routing.ALGORITHMS,
              geojson: Path | None = None) -> list[routing.RouteResult]:
    """Route between two vertex ids.  Costs are recomputed from H* at the
    configured alpha, so the result does not depend on a stale enriched file."""
    graph = road_graph(cfg)
    for v in (source, target):
        if v not in graph.index:
            raise ConfigError(f"vertex {v} is not in the road graph")
    h = relationship_graph(cfg)
    enriched = _enriched(cfg, graph, h)
    results = [routing.route(alg, enriched, h, source, target, cfg.beta) for alg in algorithms]
    routing.write_routes(cfg.output("routes.jsonl"), results)
    if geojson is not None:
        Path(geojson).write_text(json.dumps(routing.routes_geojson(results, graph), indent=1) + "\n",
                                 encoding="utf-8")
    return results


def run_eval(cfg: PipelineConfig, setting: str | None = None) -> evaluation.MetricsReport:
    exp = cfg.experiment if setting is None else replace(cfg.experiment, setting=setting)
    graph = road_graph(cfg)
    (photos_path,) = cfg.require("photos")
    index = evaluation.build_popularity_index(evaluation.read_photos(photos_path), graph,
                                              cfg.photo_radius)
    h = relationship_graph(cfg)
    report = evaluation.run_experiment(graph, h, index, exp)
    evaluation.write_report(report, cfg.output(f"report_{exp.setting}.csv"),
                            cfg.output(f"report_{exp.setting}.jsonl"))
    return report


def run_all(cfg: PipelineConfig, source: int | None = None, target: int | None = None) -> dict:
    """Every stage in order; routes between ``source`` and ``target`` when given."""
    out = {"extract": run_extract(cfg), "features": run_features(cfg), "train": run_train(cfg),
           "score": run_score(cfg), "enrich": run_enrich(cfg)}
    if source is not None and target is not None:
        out["route"] = run_route(cfg, source, target)
    out["eval"] = run_eval(cfg)
    return out
