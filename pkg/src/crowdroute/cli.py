"""``crowdroute`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .extract import CorpusError, GazetteerError, default_lexicon
from .fixture import CityConfig, generate_city, write_city
from .geo import MODES
from .pipeline import ConfigError
from .routing import ALGORITHMS

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("crowdroute")


def _global_options(defaults: bool) -> argparse.ArgumentParser:
    # Shared by the top-level parser and every subcommand so the flags work on
    # either side of the command name.  Subcommand copies must not overwrite
    # values given before the command, hence SUPPRESS there.
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=d(None), help="TOML pipeline manifest")
    g.add_argument("--seed", type=int, default=d(None))
    g.add_argument("--mode", choices=MODES, default=d(None))
    g.add_argument("--alpha", type=float, default=d(None), help="closeness weight in [0, 1]")
    g.add_argument("--beta", type=float, default=d(None), help="detour ellipse factor (> 1)")
    g.add_argument("--threads", type=int, default=d(None))
    g.add_argument("--output", type=Path, default=d(None), help="output directory")
    for key in ("gazetteer", "corpus", "lexicon", "verbs", "nodes", "edges", "photos"):
        g.add_argument(f"--{key}", type=Path, default=d(None))
    g.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdroute", parents=[_global_options(True)],
                                     description="Routes enriched by crowd-sourced spatial relations.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_global_options(False)]

    p = sub.add_parser("gen-fixture", parents=common, help="write a seeded synthetic city bundle")
    p.add_argument("directory", type=Path)
    p.add_argument("--rows", type=int, default=50)
    p.add_argument("--cols", type=int, default=50)
    p.add_argument("--spacing", type=float, default=100.0)

    sub.add_parser("extract", parents=common, help="corpus -> triplets.jsonl, pois.tsv")
    sub.add_parser("features", parents=common, help="triplets -> features.csv")
    p = sub.add_parser("train", parents=common, help="features -> models/<relation>.json")
    p.add_argument("--min-samples", type=int, default=None)
    sub.add_parser("score", parents=common, help="models + pairs -> hstar.jsonl")
    sub.add_parser("enrich", parents=common, help="H* + road graph -> enriched.tsv")

    p = sub.add_parser("route", parents=common, help="route between two vertices")
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--alg", choices=(*ALGORITHMS, "all"), default="all")
    p.add_argument("--geojson", type=Path, default=None)

    p = sub.add_parser("eval", parents=common, help="run an experiment setting")
    p.add_argument("--setting", choices=("i", "ii"), default="i")
    p.add_argument("--n-pairs", type=int, default=None)
    return parser


def _config(args) -> pipeline.PipelineConfig:
    manifest = pipeline.load_manifest(args.config) if args.config else None
    paths = {k: getattr(args, k) for k in pipeline.PATH_KEYS}
    experiment = {}
    if getattr(args, "n_pairs", None) is not None:
        experiment["n_pairs"] = args.n_pairs
    return pipeline.build_config(manifest, seed=args.seed, mode=args.mode, alpha=args.alpha,
                                 beta=args.beta, threads=args.threads, paths=paths,
                                 min_samples=getattr(args, "min_samples", None),
                                 experiment=experiment)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def cmd_gen_fixture(args) -> int:
    manifest = pipeline.load_manifest(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else manifest.get("seed", 7)
    city = generate_city(CityConfig(rows=args.rows, cols=args.cols, spacing=args.spacing, seed=seed))
    lex = default_lexicon()
    files = write_city(city, args.directory, seed, list(lex.relations), sorted(lex.verbs))
    print(f"wrote {len(files)} files to {args.directory}: {city.graph.n_vertices} vertices, "
          f"{city.graph.n_edges} edges, {len(city.pois)} PoIs, {len(city.documents)} documents, "
          f"{len(city.photos)} photos")
    return EXIT_OK


def cmd_extract(cfg, args) -> int:
    res = pipeline.run_extract(cfg)
    print(f"{len(res.triplets)} triplets over {len(res.pois)} PoIs")
    for rel, n in res.histogram.items():
        print(f"  {rel}\t{n}")
    return EXIT_OK


def cmd_features(cfg, args) -> int:
    sets = pipeline.run_features(cfg)
    print(f"{sum(len(s) for s in sets.values())} feature vectors over {len(sets)} relations")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    res = pipeline.run_train(cfg)
    lex = pipeline.lexicon(cfg)
    for k, est in sorted(res.models.items()):
        print(f"  {lex.relations[k]}\tn={est.n_samples_}\tM={est.n_components_}\t"
              f"L={est.log_likelihood_:.3f}")
    if res.skipped:
        print(f"skipped (fewer than {cfg.min_samples} samples): {', '.join(res.skipped)}")
    return EXIT_OK


def cmd_score(cfg, args) -> int:
    res = pipeline.run_score(cfg)
    print(f"{len(res.graph.edges)} edges over {len(res.graph.nodes)} PoIs")
    if res.quantiles:
        print("W quantiles: " + "  ".join(f"{k}={v:.4f}" for k, v in res.quantiles.items()))
    return EXIT_OK


def cmd_enrich(cfg, args) -> int:
    enriched = pipeline.run_enrich(cfg)
    touched = sum(n > 0 for n in enriched.n_covering)
    print(f"alpha={cfg.alpha}: {touched}/{enriched.graph.n_edges} edges lie on a related-pair path")
    return EXIT_OK


def cmd_route(cfg, args) -> int:
    algs = ALGORITHMS if args.alg == "all" else (args.alg,)
    for r in pipeline.run_route(cfg, args.source, args.target, algs, args.geojson):
        flag = " (fallback)" if r.fallback else ""
        print(f"{r.algorithm}\td={r.length:.1f} m\tcost={r.cost:.1f}\ter={r.er:.4f}\t"
              f"vertices={len(r.vertices)}\tpois={r.pois}{flag}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    report = pipeline.run_eval(cfg, args.setting)
    cols = ("parameter", "algorithm", "n_pairs", "mean_delta_length_pct",
            "mean_delta_popularity_pct", "mean_enrichment_gain_pct", "flag")
    print("\t".join(cols))
    for row in report.summary:
        print("\t".join(_fmt(row[c]) for c in cols))
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "features": cmd_features, "train": cmd_train,
            "score": cmd_score, "enrich": cmd_enrich, "route": cmd_route, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-fixture":
            return cmd_gen_fixture(args)
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, GazetteerError, CorpusError) as exc:
        print(f"crowdroute: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report and map to the failure exit code
        logger.debug("failure", exc_info=True)
        print(f"crowdroute: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
