"""Road network, PoI snapping, and closeness-based edge cost enrichment."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .closeness import RelationshipGraph
from .extract import Poi
from .geo import check_mode, distances_from, geodesic_distance

logger = logging.getLogger(__name__)

FACTOR_FLOOR = 1e-6


class GraphError(ValueError):
    pass


class DanglingEdgeError(GraphError):
    pass


class NonPositiveLengthError(GraphError):
    pass


@dataclass
class RoadGraph:
    """Road network with integer vertex ids.

    Vertices are stored sorted by id, so a smaller internal index means a
    smaller id.  ``adjacency[i]`` lists ``(neighbour index, edge index)``.
    """

    vertex_ids: list[int]
    coords: np.ndarray  # (n, 2), same slot order as the ids
    src: list[int]  # edge endpoints as vertex ids
    dst: list[int]
    lengths: list[float]
    mode: str = "geodesic"
    directed: bool = False
    index: dict[int, int] = field(init=False, repr=False)
    adjacency: list[list[tuple[int, int]]] = field(init=False, repr=False)

    def __post_init__(self):
        check_mode(self.mode)
        order = np.argsort(self.vertex_ids, kind="stable")
        self.vertex_ids = [int(self.vertex_ids[i]) for i in order]
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)[order]
        self.index = {v: i for i, v in enumerate(self.vertex_ids)}
        if len(self.index) != len(self.vertex_ids):
            raise GraphError("duplicate vertex ids")
        self.lengths = [float(x) for x in self.lengths]
        self.adjacency = [[] for _ in self.vertex_ids]
        for e, (u, v, d) in enumerate(zip(self.src, self.dst, self.lengths)):
            if u not in self.index or v not in self.index:
                raise DanglingEdgeError(f"edge {e} ({u}, {v}) references an unknown vertex")
            if u == v:
                raise GraphError(f"edge {e} is a self-loop at {u}")
            if not d > 0 or not np.isfinite(d):
                raise NonPositiveLengthError(f"edge {e} ({u}, {v}) has length {d}")
            iu, iv = self.index[u], self.index[v]
            self.adjacency[iu].append((iv, e))
            if not self.directed:
                self.adjacency[iv].append((iu, e))

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return len(self.lengths)

    def coord(self, vertex_id: int) -> tuple[float, float]:
        x = self.coords[self.index[vertex_id]]
        return (float(x[0]), float(x[1]))

    def extent(self) -> float:
        """Diagonal of the bounding box of all vertex coordinates, in meters."""
        lo, hi = self.coords.min(axis=0), self.coords.max(axis=0)
        return geodesic_distance(tuple(lo), tuple(hi), self.mode)


@dataclass
class Path:
    vertices: list[int]  # vertex ids
    edges: list[int]  # edge indices

    def __len__(self):
        return len(self.edges)

    def length(self, graph: RoadGraph) -> float:
        return float(sum(graph.lengths[e] for e in self.edges))

    def cost(self, weights) -> float:
        return float(sum(weights[e] for e in self.edges))

    @classmethod
    def concatenate(cls, parts: Iterable["Path"]) -> "Path":
        """Join consecutive paths, merging the repeated junction vertices."""
        vertices: list[int] = []
        edges: list[int] = []
        for part in parts:
            if vertices and part.vertices and vertices[-1] != part.vertices[0]:
                raise ValueError("paths do not share an endpoint")
            vertices.extend(part.vertices[1:] if vertices else part.vertices)
            edges.extend(part.edges)
        return cls(vertices, edges)


def _read_tsv(path) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t")
                if r and r[0].strip() and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]  # header
    return rows


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_graph(nodes_path, edges_path, mode: str = "geodesic", directed: bool = False) -> RoadGraph:
    """Nodes TSV ``id, lat, lon``; edges TSV ``src, dst[, length_m]``.

    Missing or empty lengths are computed from the endpoint coordinates.
    """
    check_mode(mode)
    ids, coords = [], []
    for row in _read_tsv(nodes_path):
        ids.append(int(row[0]))
        coords.append((float(row[1]), float(row[2])))
    pos = {v: c for v, c in zip(ids, coords)}
    src, dst, lengths = [], [], []
    for lineno, row in enumerate(_read_tsv(edges_path), start=1):
        u, v = int(row[0]), int(row[1])
        if u not in pos or v not in pos:
            raise DanglingEdgeError(f"edge row {lineno} ({u}, {v}) references an unknown vertex")
        if len(row) > 2 and row[2].strip():
            d = float(row[2])
        else:
            d = geodesic_distance(pos[u], pos[v], mode)
        if not d > 0:
            raise NonPositiveLengthError(f"edge row {lineno} ({u}, {v}) has length {d}")
        src.append(u)
        dst.append(v)
        lengths.append(d)
    return RoadGraph(ids, np.array(coords).reshape(-1, 2), src, dst, lengths, mode, directed)


def write_graph(graph: RoadGraph, nodes_path, edges_path):
    with open(nodes_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "lat", "lon"])
        for v, (a, b) in zip(graph.vertex_ids, graph.coords):
            w.writerow([v, repr(float(a)), repr(float(b))])
    with open(edges_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["src", "dst", "length_m"])
        for u, v, d in zip(graph.src, graph.dst, graph.lengths):
            w.writerow([u, v, repr(d)])


def map_poi_to_vertex(poi: Poi, graph: RoadGraph) -> int:
    """Nearest vertex by straight-line distance; the smallest id wins ties."""
    if graph.n_vertices == 0:
        raise GraphError("cannot snap a PoI onto an empty graph")
    d = distances_from(poi.coords, graph.coords, graph.mode)
    return graph.vertex_ids[int(np.argmin(d))]


def map_pois(pois: Iterable[Poi], graph: RoadGraph) -> dict[int, int]:
    return {p.id: map_poi_to_vertex(p, graph) for p in pois}


@dataclass
class EnrichedGraph:
    graph: RoadGraph
    alpha: float
    costs: list[float]
    covering: list[list[tuple[int, int]]]  # per edge: PoI pairs whose path uses it
    poi_vertex: dict[int, int]

    @property
    def n_covering(self) -> list[int]:
        return [len(c) for c in self.covering]

    def weights(self, which: str) -> list[float]:
        if which == "d":
            return self.graph.lengths
        if which == "c":
            return self.costs
        raise ValueError(f"unknown cost selector {which!r}")


def pair_paths(graph: RoadGraph, relationship_graph: RelationshipGraph,
               poi_vertex: Mapping[int, int]) -> dict[tuple[int, int], Path]:
    """Shortest path under d between the vertices of every related PoI pair.

    Unreachable pairs are left out with a warning.
    """
    from .routing import NoPathError, dijkstra

    out = {}
    for e in relationship_graph.edges:
        try:
            out[(e.poi_i, e.poi_j)] = dijkstra(graph, poi_vertex[e.poi_i], poi_vertex[e.poi_j])
        except NoPathError:
            logger.warning("PoI pair (%d, %d) unreachable in the road network", e.poi_i, e.poi_j)
    return out


def enrich(graph: RoadGraph, relationship_graph: RelationshipGraph, alpha: float,
           poi_vertex: Mapping[int, int] | None = None,
           paths: Mapping[tuple[int, int], Path] | None = None) -> EnrichedGraph:
    """Scale each edge by (1 - alpha * W) once per related PoI pair whose
    shortest path crosses it.

    Pair paths are computed on the original lengths before any cost changes.
    Each factor is floored at 1e-6 to keep costs positive.  Pass ``paths``
    to reuse pair paths across several alphas.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if poi_vertex is None:
        poi_vertex = map_pois(relationship_graph.nodes.values(), graph)
    if paths is None:
        paths = pair_paths(graph, relationship_graph, poi_vertex)
    factors = np.ones(graph.n_edges)
    covering: list[list[tuple[int, int]]] = [[] for _ in range(graph.n_edges)]
    for e in relationship_graph.edges:
        path = paths.get((e.poi_i, e.poi_j))
        if path is None:
            continue
        f = max(1.0 - alpha * e.w, FACTOR_FLOOR)
        for k in set(path.edges):
            factors[k] *= f
            covering[k].append((e.poi_i, e.poi_j))
    costs = (np.asarray(graph.lengths) * factors).tolist()
    return EnrichedGraph(graph, alpha, costs, covering, dict(poi_vertex))


def enrichment_ratio(path: Path, enriched: EnrichedGraph) -> float:
    d = path.length(enriched.graph)
    if not path.edges or d <= 0:
        raise ValueError("enrichment ratio needs a path of positive length")
    return path.cost(enriched.costs) / d


def write_enriched(path, enriched: EnrichedGraph):
    g = enriched.graph
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["src", "dst", "d_m", "c", "n_covering_pairs"])
        for u, v, d, c, n in zip(g.src, g.dst, g.lengths, enriched.costs, enriched.n_covering):
            w.writerow([u, v, repr(d), repr(c), n])


def read_enriched(path, graph: RoadGraph, alpha: float = float("nan"),
                  poi_vertex: Mapping[int, int] | None = None) -> EnrichedGraph:
    """Costs from an enriched-edge TSV written for the same edge list.

    Only the number of covering pairs is stored, so ``covering`` holds
    placeholder entries.
    """
    rows = _read_tsv(path)
    if len(rows) != graph.n_edges:
        raise GraphError(f"enriched file has {len(rows)} edges, graph has {graph.n_edges}")
    costs, covering = [], []
    for e, row in enumerate(rows):
        if (int(row[0]), int(row[1])) != (graph.src[e], graph.dst[e]):
            raise GraphError(f"enriched edge {e} does not match the road graph")
        costs.append(float(row[3]))
        covering.append([(-1, -1)] * int(row[4]))
    return EnrichedGraph(graph, alpha, costs, covering, dict(poi_vertex or {}))
