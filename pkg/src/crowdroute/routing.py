"""Dijkstra routing on the plain and enriched road graph, plus PoI hopping.

``dij_g`` is the plain shortest path, ``dij_g_star`` the cheapest path under
the enriched costs, and ``dij_h_star`` hops between related PoIs inside a
detour ellipse and stitches the hops together on the enriched graph.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

from .closeness import RelationshipGraph
from .geo import geodesic_distance
from .network import EnrichedGraph, Path, RoadGraph, enrichment_ratio, map_poi_to_vertex

logger = logging.getLogger(__name__)

DEFAULT_BETA = 1.6
ALGORITHMS = ("dij_g", "dij_g_star", "dij_h_star")


class NoPathError(LookupError):
    pass


@dataclass
class RouteResult:
    algorithm: str
    path: Path
    length: float
    cost: float
    er: float
    pois: list[int] = field(default_factory=list)
    fallback: bool = False

    @property
    def vertices(self) -> list[int]:
        return self.path.vertices

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "vertices": self.path.vertices, "pois": self.pois,
                "d_m": self.length, "cost": self.cost, "er": self.er, "fallback": self.fallback}


def dijkstra(graph: RoadGraph, source: int, target: int, weights: Sequence[float] | None = None) -> Path:
    """Minimum-weight path from ``source`` to ``target`` (vertex ids).

    ``weights`` defaults to the edge lengths.  Among equal-cost
    predecessors the one with the smaller vertex id is kept.
    """
    w = graph.lengths if weights is None else weights
    try:
        s, t = graph.index[source], graph.index[target]
    except KeyError as exc:
        raise NoPathError(f"vertex {exc.args[0]} not in graph") from None
    if s == t:
        return Path([source], [])
    adj = graph.adjacency
    dist = {s: 0.0}
    pred: dict[int, tuple[int, int]] = {}
    done = set()
    heap = [(0.0, s)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for v, e in adj[u]:
            if v in done:
                continue
            nd = du + w[e]
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = (u, e)
                heapq.heappush(heap, (nd, v))
            elif nd == old and u < pred[v][0]:
                pred[v] = (u, e)
    if t not in done:
        raise NoPathError(f"no path from {source} to {target}")
    verts, edges = [t], []
    while verts[-1] != s:
        u, e = pred[verts[-1]]
        edges.append(e)
        verts.append(u)
    ids = graph.vertex_ids
    return Path([ids[i] for i in reversed(verts)], edges[::-1])


def dijkstra_adjacency(adj: Mapping[Hashable, Sequence[tuple[Hashable, float]]],
                       source, target) -> list:
    """Node sequence of a shortest path in a small weighted adjacency map."""
    if source == target:
        return [source]
    dist = {source: 0.0}
    pred = {}
    done = set()
    heap = [(0.0, source)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        for v, w in adj.get(u, ()):
            if v in done:
                continue
            nd = du + w
            old = dist.get(v)
            if old is None or nd < old:
                dist[v], pred[v] = nd, u
                heapq.heappush(heap, (nd, v))
            elif nd == old and u < pred[v]:
                pred[v] = u
    if target not in done:
        raise NoPathError(f"no path from {source} to {target}")
    seq = [target]
    while seq[-1] != source:
        seq.append(pred[seq[-1]])
    return seq[::-1]


def _result(algorithm: str, path: Path, enriched: EnrichedGraph, pois=None, fallback=False) -> RouteResult:
    length = path.length(enriched.graph)
    # an empty path crosses no enriched edge
    er = enrichment_ratio(path, enriched) if path.edges else 1.0
    return RouteResult(algorithm, path, length, path.cost(enriched.costs), er,
                       list(pois or []), fallback)


def dij_g(enriched: EnrichedGraph, s: int, t: int) -> RouteResult:
    return _result("dij_g", dijkstra(enriched.graph, s, t), enriched)


def dij_g_star(enriched: EnrichedGraph, s: int, t: int) -> RouteResult:
    return _result("dij_g_star", dijkstra(enriched.graph, s, t, enriched.costs), enriched)


def ellipse_filter(relationship_graph: RelationshipGraph, s, t, beta: float = DEFAULT_BETA,
                   mode: str = "geodesic") -> RelationshipGraph:
    """Keep PoIs P with |sP| + |Pt| <= beta * |st| and the edges among them.

    ``s`` and ``t`` are coordinates.
    """
    if not beta > 1:
        raise ValueError(f"detour factor must exceed 1, got {beta}")
    base = geodesic_distance(s, t, mode)
    if base == 0:
        raise ValueError("start and target coincide")
    bound = beta * base
    keep = [i for i, p in relationship_graph.nodes.items()
            if geodesic_distance(s, p.coords, mode) + geodesic_distance(p.coords, t, mode) <= bound]
    return relationship_graph.subgraph(keep)


def _closest_poi(h: RelationshipGraph, point, mode: str) -> int:
    return min(h.nodes, key=lambda i: (geodesic_distance(point, h.nodes[i].coords, mode), i))


def dij_h_star(enriched: EnrichedGraph, relationship_graph: RelationshipGraph, s: int, t: int,
               beta: float = DEFAULT_BETA) -> RouteResult:
    """Route s -> entry PoI -> ... -> exit PoI -> t.

    The PoI sequence is a shortest path in the ellipse-restricted
    relationship graph under straight-line pair distances; each hop is a
    cheapest path in the enriched graph.  Falls back to ``dij_g_star``
    (``fallback=True``) when no PoI sequence exists.
    """
    graph = enriched.graph
    if s == t:
        return _result("dij_h_star", Path([s], []), enriched)
    s_c, t_c = graph.coord(s), graph.coord(t)
    h = ellipse_filter(relationship_graph, s_c, t_c, beta, graph.mode) if s_c != t_c \
        else RelationshipGraph()
    try:
        if not h.nodes:
            raise NoPathError("no PoI inside the query ellipse")
        entry = _closest_poi(h, s_c, graph.mode)
        exit_ = _closest_poi(h, t_c, graph.mode)
        sequence = dijkstra_adjacency(h.adjacency(), entry, exit_)
    except NoPathError as exc:
        logger.debug("dij_h_star %s -> %s falls back: %s", s, t, exc)
        res = dij_g_star(enriched, s, t)
        res.algorithm, res.fallback = "dij_h_star", True
        return res

    stops = [s]
    for poi in sequence:
        v = enriched.poi_vertex.get(poi)
        if v is None:
            v = map_poi_to_vertex(h.nodes[poi], graph)
        stops.append(v)
    stops.append(t)
    parts = [dijkstra(graph, a, b, enriched.costs) for a, b in zip(stops, stops[1:])]
    return _result("dij_h_star", Path.concatenate(parts), enriched, sequence)


def route(algorithm: str, enriched: EnrichedGraph, relationship_graph: RelationshipGraph | None,
          s: int, t: int, beta: float = DEFAULT_BETA) -> RouteResult:
    if algorithm == "dij_g":
        return dij_g(enriched, s, t)
    if algorithm == "dij_g_star":
        return dij_g_star(enriched, s, t)
    if algorithm == "dij_h_star":
        return dij_h_star(enriched, relationship_graph or RelationshipGraph(), s, t, beta)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def write_routes(path, results: Sequence[RouteResult]):
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict()) + "\n")


def routes_geojson(results: Sequence[RouteResult], graph: RoadGraph) -> dict:
    """FeatureCollection of LineStrings with ``[lon, lat]`` (or ``[east, north]``) positions."""
    feats = []
    for r in results:
        coords = [[graph.coord(v)[1], graph.coord(v)[0]] for v in r.path.vertices]
        feats.append({"type": "Feature",
                      "geometry": {"type": "LineString", "coordinates": coords},
                      "properties": {k: v for k, v in r.to_dict().items() if k != "vertices"}})
    return {"type": "FeatureCollection", "features": feats}


def is_connected_path(path: Path, graph: RoadGraph) -> bool:
    if len(path.vertices) != len(path.edges) + 1:
        return False
    for a, b, e in zip(path.vertices, path.vertices[1:], path.edges):
        if {a, b} != {graph.src[e], graph.dst[e]}:
            return False
        if graph.directed and (graph.src[e], graph.dst[e]) != (a, b):
            return False
    return True


def straight_line(graph: RoadGraph, a: int, b: int) -> float:
    return geodesic_distance(graph.coord(a), graph.coord(b), graph.mode)

