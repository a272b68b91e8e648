"""Seeded synthetic city: planar grid streets, PoIs along corridors, a blog-like
corpus relating nearby PoIs, a gazetteer, and photos clustered around PoIs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .evaluation import Photo, write_photos
from .network import RoadGraph, write_graph

FIRST = ["Amber", "Birch", "Cedar", "Dune", "Elm", "Fable", "Granite", "Harbor", "Iris", "Juniper",
         "Kestrel", "Linden", "Maple", "Nettle", "Opal", "Poplar", "Quarry", "Rowan", "Saffron",
         "Thistle", "Umber", "Violet", "Willow", "Yarrow", "Zephyr"]
SECOND = ["Gallery", "Fountain", "Tower", "Market", "Chapel", "Garden", "Museum", "Bridge",
          "Theatre", "Arcade", "Pavilion", "Library"]

TEMPLATES = [
    "{a} is {rel} {b}.",
    "We walked for a while and {a} is just {rel} {b}.",
    "Honestly, {a} lies {rel} the {b}.",
    "{a} sits right {rel} {b}.",
    "Our guide said {a} is very {rel} {b}.",
    "{a} stands {rel} {b}.",
]
DISTRACTORS = [
    "{a} invested heavily in new lighting and {b} followed later.",
    "After lunch we took a taxi from {a} to see {b}.",
    "{a} was crowded, so we skipped it and went home.",
    "The coffee was great and the staff were friendly.",
    "I would not recommend {a} on a rainy day, unlike {b}.",
]
# typical pair distance ranges (m) per relation; pairs are labelled with a
# relation whose range contains their distance
RELATION_RANGES = {
    "next to": (0, 320),
    "at": (0, 260),
    "close by": (150, 450),
    "close to": (200, 550),
    "near": (250, 700),
    "in": (100, 500),
}


@dataclass
class CityConfig:
    rows: int = 50
    cols: int = 50
    spacing: float = 100.0
    n_corridors: int = 3
    poi_spacing: float = 300.0
    poi_jitter: float = 20.0
    relation_radius: float = 650.0
    photos_per_poi: tuple[int, int] = (30, 80)
    photo_sigma: float = 30.0
    background_photos: int = 5000
    seed: int = 7


@dataclass
class City:
    graph: RoadGraph
    pois: list[tuple[str, float, float]]  # name, north, east
    corridor_of: list[int]
    documents: list[dict]
    photos: list[Photo]
    planted: list[tuple[str, str, str]] = field(default_factory=list)


def grid_graph(rows: int, cols: int, spacing: float) -> RoadGraph:
    ids, coords, src, dst, lengths = [], [], [], [], []
    for r in range(rows):
        for c in range(cols):
            ids.append(r * cols + c)
            coords.append((r * spacing, c * spacing))
            if c + 1 < cols:
                src.append(r * cols + c)
                dst.append(r * cols + c + 1)
                lengths.append(spacing)
            if r + 1 < rows:
                src.append(r * cols + c)
                dst.append((r + 1) * cols + c)
                lengths.append(spacing)
    return RoadGraph(ids, np.array(coords), src, dst, lengths, mode="planar")


def _corridors(cfg: CityConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    h = (cfg.rows - 1) * cfg.spacing
    w = (cfg.cols - 1) * cfg.spacing
    # fixed shapes crossing the city centre, nudged by the seed
    base = [((0.15 * h, 0.1 * w), (0.85 * h, 0.9 * w)),
            ((0.5 * h, 0.05 * w), (0.55 * h, 0.95 * w)),
            ((0.05 * h, 0.45 * w), (0.95 * h, 0.6 * w)),
            ((0.8 * h, 0.1 * w), (0.2 * h, 0.85 * w))]
    out = []
    for k in range(cfg.n_corridors):
        a, b = base[k % len(base)]
        a = np.array(a) + rng.normal(0, 0.02 * h, 2)
        b = np.array(b) + rng.normal(0, 0.02 * h, 2)
        out.append((np.clip(a, 0, [h, w]), np.clip(b, 0, [h, w])))
    return out


def _names(n: int, rng: np.random.Generator) -> list[str]:
    combos = [f"{a} {b}" for a in FIRST for b in SECOND]
    idx = rng.permutation(len(combos))[:n]
    return [combos[i] for i in idx]


def generate_city(cfg: CityConfig | None = None) -> City:
    cfg = cfg or CityConfig()
    rng = np.random.default_rng(cfg.seed)
    graph = grid_graph(cfg.rows, cfg.cols, cfg.spacing)

    points, corridor_of = [], []
    for k, (a, b) in enumerate(_corridors(cfg, rng)):
        n = max(2, int(np.linalg.norm(b - a) // cfg.poi_spacing) + 1)
        for s in np.linspace(0, 1, n):
            p = a + s * (b - a) + rng.normal(0, cfg.poi_jitter, 2)
            points.append(p)
            corridor_of.append(k)
    names = _names(len(points), rng)
    pois = [(nm, float(round(p[0], 3)), float(round(p[1], 3))) for nm, p in zip(names, points)]

    documents, planted = _corpus(pois, cfg, rng)
    photos = _photos(pois, cfg, rng)
    return City(graph, pois, corridor_of, documents, photos, planted)


def _relation_for(dist: float, rng: np.random.Generator) -> str | None:
    options = [r for r, (lo, hi) in RELATION_RANGES.items() if lo <= dist <= hi]
    if not options:
        return None
    return options[int(rng.integers(len(options)))]


def _corpus(pois, cfg: CityConfig, rng: np.random.Generator):
    pts = np.array([(p[1], p[2]) for p in pois])
    docs, planted = [], []
    sentences: list[str] = []
    for i in range(len(pois)):
        for j in range(i + 1, len(pois)):
            dist = float(np.hypot(*(pts[i] - pts[j])))
            if dist > cfg.relation_radius:
                continue
            # each pair is mentioned 1-3 times with distinct relations
            used = set()
            for _ in range(int(rng.integers(1, 4))):
                rel = _relation_for(dist, rng)
                if rel is None or rel in used:
                    continue
                used.add(rel)
                a, b = (i, j) if rng.random() < 0.5 else (j, i)
                tpl = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
                sentences.append(tpl.format(a=pois[a][0], b=pois[b][0], rel=rel))
                planted.append((pois[a][0], rel, pois[b][0]))
    for _ in range(len(sentences) // 3):
        i, j = rng.choice(len(pois), size=2, replace=False)
        tpl = DISTRACTORS[int(rng.integers(len(DISTRACTORS)))]
        sentences.append(tpl.format(a=pois[i][0], b=pois[j][0]))
    order = rng.permutation(len(sentences))
    per_doc = 8
    for d in range(0, len(order), per_doc):
        text = " ".join(sentences[k] for k in order[d:d + per_doc])
        docs.append({"id": f"blog-{d // per_doc:04d}", "text": text})
    return docs, planted


def _photos(pois, cfg: CityConfig, rng: np.random.Generator) -> list[Photo]:
    h = (cfg.rows - 1) * cfg.spacing
    w = (cfg.cols - 1) * cfg.spacing
    out = []
    for _, n, e in pois:
        k = int(rng.integers(cfg.photos_per_poi[0], cfg.photos_per_poi[1] + 1))
        for dn, de in rng.normal(0, cfg.photo_sigma, (k, 2)):
            out.append((n + dn, e + de))
    for n, e in rng.uniform(0, 1, (cfg.background_photos, 2)) * [h, w]:
        out.append((n, e))
    return [Photo(f"p{i:06d}", float(round(a, 3)), float(round(b, 3))) for i, (a, b) in enumerate(out)]


MANIFEST = """\
# synthetic city pipeline manifest
mode = "planar"
seed = {seed}
alpha = 0.5
beta = 1.6
threads = 1

[paths]
gazetteer = "gazetteer.tsv"
corpus = "corpus.jsonl"
lexicon = "relations.txt"
verbs = "verbs.txt"
nodes = "nodes.tsv"
edges = "edges.tsv"
photos = "photos.tsv"
output = "out"
"""


def write_city(city: City, out_dir, seed: int, relations: list[str], verbs: list[str]) -> dict:
    """Write the bundle files; returns name -> path."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {name: out / name for name in ("nodes.tsv", "edges.tsv", "gazetteer.tsv", "corpus.jsonl",
                                           "photos.tsv", "relations.txt", "verbs.txt",
                                           "pipeline.toml")}
    write_graph(city.graph, files["nodes.tsv"], files["edges.tsv"])
    with open(files["gazetteer.tsv"], "w", encoding="utf-8") as fh:
        fh.write("name\tlat\tlon\tpopulation\n")
        for name, n, e in city.pois:
            fh.write(f"{name}\t{n!r}\t{e!r}\t0\n")
    with open(files["corpus.jsonl"], "w", encoding="utf-8") as fh:
        for doc in city.documents:
            fh.write(json.dumps(doc) + "\n")
    write_photos(files["photos.tsv"], city.photos)
    files["relations.txt"].write_text("\n".join(relations) + "\n", encoding="utf-8")
    files["verbs.txt"].write_text("\n".join(verbs) + "\n", encoding="utf-8")
    files["pipeline.toml"].write_text(MANIFEST.format(seed=seed), encoding="utf-8")
    return files



# hand-authored extraction fixture: 20 sentences, 6 planted relations
EXTRACTION_EXPECTED = [
    ("Eiffel Tower", "near", "Champ de Mars"),
    ("Louvre", "next to", "Jardin des Tuileries"),
    ("Notre-Dame", "in", "Île de la Cité"),
    ("Sacré-Cœur", "at", "Montmartre"),
    ("Arc de Triomphe", "close to", "Place de l'Étoile"),
    ("Musée d'Orsay", "close by", "Pont Royal"),
]


def extraction_fixture() -> tuple:
    """``(gazetteer, corpus)`` resources of the bundled extraction fixture."""
    from importlib import resources

    base = resources.files("crowdroute") / "data"
    return base / "extraction_gazetteer.tsv", base / "extraction_corpus.jsonl"
