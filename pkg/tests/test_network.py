import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdroute.closeness import RelationshipEdge, RelationshipGraph
from crowdroute.extract import Poi
from crowdroute.network import (FACTOR_FLOOR, DanglingEdgeError, GraphError, NonPositiveLengthError,
                                Path, RoadGraph, enrich, enrichment_ratio, load_graph,
                                map_poi_to_vertex, read_enriched, write_enriched, write_graph)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def line_graph(n=3, step=100.0):
    return RoadGraph(list(range(n)), [(0.0, i * step) for i in range(n)],
                     list(range(n - 1)), list(range(1, n)), [step] * (n - 1), mode="planar")


def h_graph(edges, coords):
    nodes = {i: Poi(i, f"P{i}", *c) for i, c in coords.items()}
    return RelationshipGraph(nodes, [RelationshipEdge(i, j, w, 0.0, (0,)) for i, j, w in edges])


def test_square_lengths_from_coordinates(tmp_path):
    nodes = write(tmp_path / "n.tsv", "id\tlat\tlon\n1\t0\t0\n2\t0\t3\n3\t4\t3\n4\t4\t0\n")
    edges = write(tmp_path / "e.tsv", "src\tdst\n1\t2\n2\t3\n3\t4\n4\t1\n")
    g = load_graph(nodes, edges, "planar")
    assert g.n_edges == 4 and g.lengths == [3.0, 4.0, 3.0, 4.0]


def test_explicit_length_wins(tmp_path):
    nodes = write(tmp_path / "n.tsv", "1\t0\t0\n2\t0\t3\n")
    edges = write(tmp_path / "e.tsv", "1\t2\t10.5\n")
    assert load_graph(nodes, edges, "planar").lengths == [10.5]


def test_geodesic_lengths(tmp_path):
    nodes = write(tmp_path / "n.tsv", "1\t0\t0\n2\t1\t0\n")
    edges = write(tmp_path / "e.tsv", "1\t2\n")
    assert load_graph(nodes, edges).lengths[0] == pytest.approx(111_194.93, abs=0.01)


def test_graph_errors(tmp_path):
    nodes = write(tmp_path / "n.tsv", "1\t0\t0\n2\t0\t3\n")
    with pytest.raises(DanglingEdgeError):
        load_graph(nodes, write(tmp_path / "e1.tsv", "1\t9\n"), "planar")
    with pytest.raises(NonPositiveLengthError):
        load_graph(nodes, write(tmp_path / "e2.tsv", "1\t2\t0\n"), "planar")
    dup = write(tmp_path / "n2.tsv", "1\t0\t0\n2\t5\t5\n")
    with pytest.raises(NonPositiveLengthError):
        load_graph(dup, write(tmp_path / "e3.tsv", "1\t2\t-1\n"), "planar")
    with pytest.raises(GraphError):
        RoadGraph([1, 1], [(0, 0), (1, 1)], [], [], [], mode="planar")
    with pytest.raises(GraphError):
        RoadGraph([1, 2], [(0, 0), (1, 1)], [1], [1], [1.0], mode="planar")


def test_graph_round_trip(tmp_path):
    g = line_graph(4)
    write_graph(g, tmp_path / "n.tsv", tmp_path / "e.tsv")
    back = load_graph(tmp_path / "n.tsv", tmp_path / "e.tsv", "planar")
    assert back.vertex_ids == g.vertex_ids and back.lengths == g.lengths
    assert np.array_equal(back.coords, g.coords)


def test_map_poi():
    g = RoadGraph([7, 3, 5], [(0.0, 2.0), (0.0, -2.0), (10.0, 0.0)], [], [], [], mode="planar")
    assert map_poi_to_vertex(Poi(0, "x", 10.0, 0.0), g) == 5
    assert map_poi_to_vertex(Poi(0, "x", 0.0, 0.0), g) == 3  # tie between 7 and 3
    with pytest.raises(GraphError):
        map_poi_to_vertex(Poi(0, "x", 0.0, 0.0), RoadGraph([], np.empty((0, 2)), [], [], [], mode="planar"))


def test_alpha_zero_keeps_lengths():
    g = line_graph()
    e = enrich(g, h_graph([(0, 1, 0.9)], {0: (0, 0), 1: (0, 200)}), 0.0)
    assert e.costs == g.lengths


def test_two_covering_pairs_multiply():
    g = line_graph(4)
    h = h_graph([(0, 1, 0.5), (2, 3, 0.25)], {0: (0, 0), 1: (0, 200), 2: (0, 100), 3: (0, 300)})
    e = enrich(g, h, 1.0)
    # edge 1-2 lies on both pair paths
    assert e.costs[1] == pytest.approx(100 * 0.5 * 0.75)
    assert e.n_covering == [1, 2, 1]


def test_line_graph_single_pair():
    g = line_graph()
    e = enrich(g, h_graph([(0, 1, 0.4)], {0: (0, 0), 1: (0, 200)}), 0.5)
    assert e.costs == pytest.approx([80.0, 80.0])


def test_factor_floor():
    g = line_graph()
    e = enrich(g, h_graph([(0, 1, 1.0)], {0: (0, 0), 1: (0, 200)}), 1.0)
    assert e.costs == pytest.approx([100 * FACTOR_FLOOR] * 2)
    assert min(e.costs) > 0


def test_unreachable_pair_skipped(caplog):
    g = RoadGraph([0, 1, 2], [(0, 0), (0, 100), (0, 500)], [0], [1], [100.0], mode="planar")
    e = enrich(g, h_graph([(0, 1, 0.5)], {0: (0, 0), 1: (0, 500)}), 1.0)
    assert e.costs == [100.0]
    assert "unreachable" in caplog.text


def test_alpha_validation():
    with pytest.raises(ValueError):
        enrich(line_graph(), RelationshipGraph(), 1.5)


def test_enrichment_ratio_cases():
    g = line_graph()
    e = enrich(g, h_graph([(0, 1, 0.2)], {0: (0, 0), 1: (0, 100)}), 1.0)
    p = Path([0, 1, 2], [0, 1])
    assert enrichment_ratio(p, e) == pytest.approx((80 + 100) / 200)
    assert enrichment_ratio(Path([1, 2], [1]), e) == 1.0
    e.costs = [0.0, 0.0]
    assert enrichment_ratio(p, e) == 0.0
    with pytest.raises(ValueError):
        enrichment_ratio(Path([0], []), e)


def test_enriched_round_trip(tmp_path):
    g = line_graph(4)
    e = enrich(g, h_graph([(0, 1, 0.3)], {0: (0, 0), 1: (0, 200)}), 0.7)
    write_enriched(tmp_path / "x.tsv", e)
    assert (tmp_path / "x.tsv").read_text().splitlines()[0] == "src\tdst\td_m\tc\tn_covering_pairs"
    back = read_enriched(tmp_path / "x.tsv", g)
    assert back.costs == e.costs and back.n_covering == e.n_covering
    with pytest.raises(GraphError):
        read_enriched(tmp_path / "x.tsv", line_graph(3))


def test_path_concatenate():
    p = Path.concatenate([Path([1, 2], [0]), Path([2, 3, 4], [1, 2]), Path([4], [])])
    assert p.vertices == [1, 2, 3, 4] and p.edges == [0, 1, 2]
    with pytest.raises(ValueError):
        Path.concatenate([Path([1, 2], [0]), Path([3, 4], [1])])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.floats(0, 1)), max_size=8),
       st.floats(0, 1), st.floats(0, 1))
def test_costs_bounded_and_monotone_in_alpha(pairs, a1, a2):
    g = line_graph(6)
    coords = {i: (0.0, 100.0 * i) for i in range(6)}
    edges = [(min(i, j), max(i, j), w) for i, j, w in pairs if i != j]
    h = h_graph(edges, coords)
    lo, hi = sorted((a1, a2))
    c_lo, c_hi = enrich(g, h, lo).costs, enrich(g, h, hi).costs
    for d, cl, ch in zip(g.lengths, c_lo, c_hi):
        assert 0 < ch <= cl <= d
