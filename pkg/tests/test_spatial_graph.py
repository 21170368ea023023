"""
Property-based tests for spatial_graph module.
Uses Hypothesis for property-based testing.
"""

import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import geopandas as gpd
import networkx as nx
import numpy as np
import shapely
from shapely.geometry import LineString, box

from app.errors import DataError
from app.ingest import BuildingSet, StreetNetwork, build_network
from app.spatial_graph import (
    NO_LINK,
    adjacency_edge_list,
    build_contiguity,
    build_street_graph,
    k_order_balls,
    k_order_neighbourhood,
    links_frame,
    morans_i,
    network_from_links,
    shared_boundary_length,
)
from app.synthetic import random_rectangles
from app.tessellation import BlockSet, CellSet, morphological_tessellation
from tests.fixtures import grid_cells, grid_graph


def _as_networkx(graph) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(len(graph)))
    coo = graph.adjacency.tocoo()
    g.add_edges_from(zip(coo.row.tolist(), coo.col.tolist()))
    return g


def test_grid_centre_has_eight_queen_neighbours():
    graph = grid_graph(3, 3)
    assert graph.degrees[4] == 8
    assert sorted(graph.degrees.tolist()) == [3, 3, 3, 3, 5, 5, 5, 5, 8]


def test_rook_ignores_corner_touches():
    graph = build_contiguity(grid_cells(3, 3), kind="rook")
    assert graph.degrees[4] == 4
    assert graph.degrees[0] == 2
    assert graph.degrees.tolist() == [2, 3, 2, 3, 4, 3, 2, 3, 2]
    assert graph.n_edges == 12


def test_shared_boundary_length():
    a = np.array([box(0, 0, 10, 10), box(0, 0, 10, 10), box(0, 0, 10, 10)], dtype=object)
    b = np.array([box(10, 0, 20, 10), box(10, 10, 20, 20), box(10 + 1e-8, 4, 20, 20)], dtype=object)
    lengths = shared_boundary_length(a, b, 1e-6)
    assert lengths[0] == pytest.approx(10.0)
    assert lengths[1] == 0.0
    assert lengths[2] == pytest.approx(6.0, abs=1e-6)


def test_rook_on_tessellation_is_subset_of_queen():
    cells = morphological_tessellation(random_rectangles(30, seed=5), limit=40.0, densify=1.0)
    queen = build_contiguity(cells).adjacency
    rook = build_contiguity(cells, kind="rook").adjacency
    assert (rook - rook.multiply(queen)).nnz == 0
    assert 0 < rook.nnz <= queen.nnz


def test_distant_cells_isolated():
    cells = CellSet(frame=gpd.GeoDataFrame({"building_id": ["a", "b"]}, geometry=[box(0, 0, 1, 1), box(10, 10, 11, 11)]))
    graph = build_contiguity(cells)
    assert graph.degrees.tolist() == [0, 0]
    assert graph.n_edges == 0


def test_unknown_kind_and_cell():
    with pytest.raises(DataError):
        build_contiguity(grid_cells(2, 2), kind="bishop")
    with pytest.raises(DataError):
        grid_graph(2, 2).index_of("nope")


def test_contiguity_matches_pairwise_oracle():
    buildings = random_rectangles(60, seed=3)
    cells = morphological_tessellation(buildings, limit=40.0, densify=1.0)
    graph = build_contiguity(cells)
    geoms = cells.geometries
    expected = set()
    for i in range(len(geoms)):
        for j in range(i + 1, len(geoms)):
            if shapely.distance(geoms[i], geoms[j]) <= 1e-6:
                expected.add((i, j))
    coo = graph.adjacency.tocoo()
    found = {(int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j}
    assert found == expected


def test_k_zero_and_one():
    graph = grid_graph(3, 3)
    assert k_order_neighbourhood(graph, "1-1", 0).tolist() == [4]
    assert len(k_order_neighbourhood(graph, "1-1", 1)) == 9
    with pytest.raises(DataError):
        k_order_neighbourhood(graph, 0, -1)


# **Feature: spatial-graph, Property 1: Balls equal BFS shortest-path oracle**
@given(
    rows=st.integers(min_value=1, max_value=7),
    cols=st.integers(min_value=1, max_value=7),
    k=st.integers(min_value=0, max_value=4),
    data=st.data(),
)
@settings(max_examples=20, deadline=None)
def test_balls_match_shortest_paths(rows, cols, k, data):
    """
    For any grid and order k:
    1. ball(k) = cells at hop distance <= k
    2. the batched balls equal the per-cell query
    3. ball(k) is contained in ball(k + 1)
    """
    graph = grid_graph(rows, cols)
    cell = data.draw(st.integers(min_value=0, max_value=len(graph) - 1))
    hops = nx.single_source_shortest_path_length(_as_networkx(graph), cell, cutoff=k)
    ball = k_order_neighbourhood(graph, cell, k)
    assert ball.tolist() == sorted(hops)

    balls = k_order_balls(graph, k)
    row = balls.indices[balls.indptr[cell]:balls.indptr[cell + 1]]
    assert row.tolist() == ball.tolist()
    assert set(ball) <= set(k_order_neighbourhood(graph, cell, k + 1))


def test_contiguity_symmetric():
    graph = build_contiguity(morphological_tessellation(random_rectangles(40, seed=5), limit=40.0, densify=1.0))
    assert (graph.adjacency != graph.adjacency.T).nnz == 0
    assert graph.adjacency.diagonal().sum() == 0


def test_block_constrained_ball_is_subset():
    cells = grid_cells(4, 4)
    graph = build_contiguity(cells)
    assignment = np.array([0 if c < 2 else 1 for r in range(4) for c in range(4)])
    blocks = BlockSet(frame=gpd.GeoDataFrame({"block_id": [0, 1]}, geometry=[box(0, 0, 20, 40), box(20, 0, 40, 40)]), assignment=assignment)
    for cell in range(len(graph)):
        constrained = set(k_order_neighbourhood(graph, cell, 3, blocks))
        assert constrained <= set(k_order_neighbourhood(graph, cell, 3))
        assert all(assignment[j] == assignment[cell] for j in constrained)


def test_edge_list_export():
    edges = adjacency_edge_list(grid_graph(1, 3))
    assert edges.values.tolist() == [["0-0", "0-1"], ["0-1", "0-2"]]


def test_morans_i():
    graph = grid_graph(6, 6)
    gradient = np.array([r + c for r in range(6) for c in range(6)], dtype=float)
    assert morans_i(gradient, graph) > 0.5
    assert np.isnan(morans_i(np.ones(36), graph))
    with pytest.raises(DataError):
        morans_i(np.ones(5), graph)


# ============== STREET GRAPH ==============

def _cells_from(buildings):
    return CellSet(frame=gpd.GeoDataFrame({"building_id": buildings.ids}, geometry=list(buildings.geometries)))


def test_building_links_to_nearest_segment():
    streets = build_network([LineString([(0, 0), (100, 0)]), LineString([(0, 50), (100, 50)])])
    buildings = BuildingSet.from_records(["near0", "near1"], [box(40, 5, 50, 15), box(40, 35, 50, 45)])
    network = build_street_graph(streets, _cells_from(buildings), buildings)
    lines = np.asarray(streets.segments.geometry.values, dtype=object)
    ys = [line.coords[0][1] for line in lines[network.building_segment]]
    assert ys == [0.0, 50.0]
    assert network.graph.number_of_edges() == 2


def test_equidistant_tie_goes_to_lower_segment():
    streets = build_network([LineString([(0, 0), (100, 0)]), LineString([(0, 20), (100, 20)])])
    buildings = BuildingSet.from_records(["mid"], [box(45, 5, 55, 15)])
    network = build_street_graph(streets, _cells_from(buildings), buildings)
    assert network.building_segment.tolist() == [0]


def test_random_links_match_exhaustive_search():
    buildings = random_rectangles(100, seed=11)
    rng = np.random.default_rng(2)
    lines = [LineString([tuple(rng.uniform(-50, 350, 2)), tuple(rng.uniform(-50, 350, 2))]) for _ in range(12)]
    streets = build_network(lines)
    network = build_street_graph(streets, _cells_from(buildings), buildings)

    segments = np.asarray(streets.segments.geometry.values, dtype=object)
    segment_ids = streets.segments["segment_id"].to_numpy()
    nodes = shapely.get_coordinates(np.asarray(streets.nodes.geometry.values, dtype=object))
    for i, footprint in enumerate(buildings.geometries):
        centroid = footprint.centroid
        d = shapely.distance(centroid, segments)
        assert network.building_segment[i] == segment_ids[d <= d.min() + 1e-9].min()
        node_d = np.hypot(*(nodes - [centroid.x, centroid.y]).T)
        assert network.cell_node[i] == np.flatnonzero(node_d <= node_d.min() * (1 + 1e-12) + 1e-12).min()


def test_empty_network_leaves_links_unset():
    buildings = BuildingSet.from_records(["a"], [box(0, 0, 10, 10)])
    network = build_street_graph(StreetNetwork.empty(), _cells_from(buildings), buildings)
    assert network.is_empty
    assert network.cell_node.tolist() == [NO_LINK]
    assert network.building_segment.tolist() == [NO_LINK]


def test_network_rebuilt_from_links():
    streets = build_network([LineString([(0, 0), (100, 0)]), LineString([(50, 0), (50, 50)])])
    buildings = BuildingSet.from_records(["a", "b"], [box(10, 10, 20, 20), box(60, 10, 70, 20)])
    cells = _cells_from(buildings)
    network = build_street_graph(streets, cells, buildings)
    rebuilt = network_from_links(streets, links_frame(cells, network))
    assert rebuilt.cell_node.tolist() == network.cell_node.tolist()
    assert rebuilt.building_segment.tolist() == network.building_segment.tolist()
    assert sorted(rebuilt.graph.edges(keys=True)) == sorted(network.graph.edges(keys=True))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
