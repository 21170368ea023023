"""
Spatial Graph
Contiguity of tessellation cells, k-order neighbourhoods and the street network
graph with cell/building links.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import networkx as nx
import numpy as np
import pandas as pd
import shapely
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import DataError
from .ingest import BuildingSet, StreetNetwork
from .tessellation import BlockSet, CellSet

logger = logging.getLogger(__name__)

NO_LINK = -1


@dataclass
class ContiguityGraph:
    """Symmetric, irreflexive adjacency between cells (row order = cell order)."""

    ids: List[str]
    adjacency: sparse.csr_matrix
    kind: str = "queen"
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.adjacency = sparse.csr_matrix(self.adjacency, dtype=np.int8)
        self.adjacency.sort_indices()
        self._index = {cell_id: i for i, cell_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, cell: Union[int, str]) -> int:
        if isinstance(cell, (int, np.integer)) and not isinstance(cell, bool):
            if 0 <= cell < len(self.ids):
                return int(cell)
        elif cell in self._index:
            return self._index[cell]
        raise DataError(f"Unknown cell id: {cell!r}")

    def neighbours(self, cell: Union[int, str]) -> np.ndarray:
        i = self.index_of(cell)
        return self.adjacency.indices[self.adjacency.indptr[i]:self.adjacency.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)


def symmetric_adjacency(rows: np.ndarray, cols: np.ndarray, n: int) -> sparse.csr_matrix:
    keep = rows != cols
    data = np.ones(int(keep.sum()), dtype=np.int8)
    adj = sparse.coo_matrix((data, (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    adj = adj.maximum(adj.T)
    adj.data[:] = 1
    adj.eliminate_zeros()
    return adj


def shared_boundary_length(a: np.ndarray, b: np.ndarray, tolerance: float) -> np.ndarray:
    """
    Length of the boundary stretch each pair of polygons has in common.

    Boundaries of `a` are snapped onto those of `b` first, so edges that
    coincide up to the tolerance overlap exactly. Point contacts have length 0.
    """
    boundary_a = shapely.boundary(a)
    boundary_b = shapely.boundary(b)
    shared = shapely.intersection(shapely.snap(boundary_a, boundary_b, tolerance), boundary_b)
    return shapely.length(shared)


def build_contiguity(cells: CellSet, tolerance: float = 1e-6, kind: str = "queen") -> ContiguityGraph:
    """
    Adjacency of cells sharing at least one boundary point (queen) or a
    boundary stretch longer than the tolerance (rook).

    Args:
        cells: Tessellation
        tolerance: Distance within which boundaries count as touching (m)
        kind: "queen" or "rook"

    Returns:
        ContiguityGraph; isolated cells have degree 0
    """
    geoms = cells.geometries
    tree = shapely.STRtree(geoms)
    rows, cols = tree.query(geoms, predicate="dwithin", distance=tolerance)
    if kind == "rook":
        mask = rows < cols
        rows, cols = rows[mask], cols[mask]
        keep = shared_boundary_length(geoms[rows], geoms[cols], tolerance) > tolerance
        rows, cols = rows[keep], cols[keep]
    elif kind != "queen":
        raise DataError(f"Unknown contiguity kind: {kind}")

    graph = ContiguityGraph(ids=cells.ids, adjacency=symmetric_adjacency(rows, cols, len(geoms)), kind=kind)
    logger.info("%s contiguity: %d cells, %d edges, %d isolated", kind, len(graph), graph.n_edges, int(np.sum(graph.degrees == 0)))
    return graph


def constrained_adjacency(graph: ContiguityGraph, blocks: Optional[BlockSet]) -> sparse.csr_matrix:
    """Adjacency with edges between cells of different blocks removed; unchanged without blocks."""
    if blocks is None:
        return graph.adjacency
    if blocks.assignment is None or len(blocks.assignment) != len(graph):
        raise DataError("Block-constrained traversal needs a cell -> block assignment for every cell")
    adj = graph.adjacency.tocoo()
    same = blocks.assignment[adj.row] == blocks.assignment[adj.col]
    return sparse.csr_matrix((adj.data[same], (adj.row[same], adj.col[same])), shape=adj.shape)


def k_order_neighbourhood(
    graph: ContiguityGraph, cell: Union[int, str], k: int, blocks: Optional[BlockSet] = None
) -> np.ndarray:
    """
    Cells within k contiguity steps of `cell`, the cell itself included.

    Args:
        graph: Contiguity graph
        cell: Cell index or building id
        k: Order of contiguity (>= 0)
        blocks: If given, traversal never leaves the cell's block

    Returns:
        Sorted array of cell indices
    """
    if k < 0:
        raise DataError(f"k must be >= 0, got {k}")
    adj = constrained_adjacency(graph, blocks)
    start = graph.index_of(cell)
    visited = {start}
    frontier = [start]
    for _ in range(k):
        nxt = []
        for i in frontier:
            for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]]:
                if j not in visited:
                    visited.add(int(j))
                    nxt.append(int(j))
        if not nxt:
            break
        frontier = nxt
    return np.array(sorted(visited), dtype=int)


def k_order_balls(graph: ContiguityGraph, k: int, blocks: Optional[BlockSet] = None) -> sparse.csr_matrix:
    """
    Ball(k) of every cell at once as a boolean reachability matrix.

    Row i holds the (sorted) indices of all cells within k steps of cell i.
    """
    if k < 0:
        raise DataError(f"k must be >= 0, got {k}")
    n = len(graph)
    step = (constrained_adjacency(graph, blocks) + sparse.identity(n, format="csr", dtype=np.int8)).astype(np.int32)
    reach = sparse.identity(n, format="csr", dtype=np.int32)
    for _ in range(k):
        reach = reach @ step
        reach.data[:] = 1
    reach = sparse.csr_matrix(reach, dtype=np.int8)
    reach.sort_indices()
    return reach


def ball_members(balls: sparse.csr_matrix, i: int) -> np.ndarray:
    return balls.indices[balls.indptr[i]:balls.indptr[i + 1]]


def adjacency_edge_list(graph: ContiguityGraph) -> pd.DataFrame:
    """Edge list (one row per undirected edge, source < target by cell index) for audit exports."""
    upper = sparse.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    ids = np.asarray(graph.ids, dtype=object)
    return pd.DataFrame({"source": ids[upper.row[order]], "target": ids[upper.col[order]]})


def morans_i(values, graph: ContiguityGraph) -> float:
    """
    Global Moran's I under row-standardised contiguity weights.

    Isolated cells have a zero spatial lag. Returns NaN for a constant variable.
    """
    y = np.asarray(values, dtype=float)
    if y.shape[0] != len(graph):
        raise DataError("Moran's I needs one value per cell")
    z = y - y.mean()
    denominator = float(z @ z)
    if denominator == 0.0:
        return float("nan")
    degrees = graph.degrees.astype(float)
    weights = sparse.diags(np.divide(1.0, degrees, out=np.zeros_like(degrees), where=degrees > 0)) @ graph.adjacency
    s0 = float(weights.sum())
    lag = weights @ z
    return float(len(y) / s0 * (z @ lag) / denominator)


# ============== STREET GRAPH ==============

@dataclass
class NetworkGraph:
    """Street graph plus the links broadcasting street characters to cells."""

    graph: nx.MultiGraph
    cell_node: np.ndarray  # per cell: node_id or NO_LINK
    building_segment: np.ndarray  # per building: segment_id or NO_LINK
    streets: StreetNetwork

    @property
    def is_empty(self) -> bool:
        return self.graph.number_of_nodes() == 0


def _nearest_lowest(tree_points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Nearest point index, ties going to the lowest index."""
    tree = cKDTree(tree_points)
    dist, _ = tree.query(query, k=1)
    radius = dist * (1 + 1e-12) + 1e-12
    return np.array([min(hits) for hits in tree.query_ball_point(query, r=radius)], dtype=int)


def street_graph(streets: StreetNetwork) -> nx.MultiGraph:
    """Primal street graph: nodes carry x/y, edges are keyed by segment_id."""
    graph = nx.MultiGraph()
    if streets.is_empty:
        return graph
    node_xy = shapely.get_coordinates(np.asarray(streets.nodes.geometry.values, dtype=object))
    for node_id, (x, y) in zip(streets.nodes["node_id"].to_numpy(dtype=int), node_xy):
        graph.add_node(int(node_id), x=float(x), y=float(y))
    for row in streets.segments.itertuples(index=False):
        graph.add_edge(
            int(row.node_start), int(row.node_end), key=int(row.segment_id),
            segment_id=int(row.segment_id), length=float(row.length),
        )
    return graph


def network_from_links(streets: StreetNetwork, links: pd.DataFrame) -> NetworkGraph:
    """Rebuild a NetworkGraph from a saved links table (cell order preserved)."""
    return NetworkGraph(
        graph=street_graph(streets),
        cell_node=links["node_id"].to_numpy(dtype=int),
        building_segment=links["segment_id"].to_numpy(dtype=int),
        streets=streets,
    )


def build_street_graph(
    streets: StreetNetwork, cells: CellSet, buildings: Optional[BuildingSet] = None
) -> NetworkGraph:
    """
    Street graph with a nearest-node link per cell centroid and a
    nearest-segment link per building centroid (Euclidean).

    Args:
        streets: Planarised network; may be empty
        cells: Tessellation
        buildings: Footprints for building links; cell centroids are used when omitted

    Returns:
        NetworkGraph; with an empty network every link is NO_LINK
    """
    n = len(cells)
    graph = street_graph(streets)
    if streets.is_empty:
        logger.warning("Empty street network: street characters will be missing")
        return NetworkGraph(graph=graph, cell_node=np.full(n, NO_LINK), building_segment=np.full(n, NO_LINK), streets=streets)

    node_xy = shapely.get_coordinates(np.asarray(streets.nodes.geometry.values, dtype=object))
    node_ids = streets.nodes["node_id"].to_numpy(dtype=int)
    cell_xy = shapely.get_coordinates(shapely.centroid(cells.geometries))
    cell_node = node_ids[_nearest_lowest(node_xy, cell_xy)]

    anchors = buildings.geometries if buildings is not None else cells.geometries
    segment_geoms = np.asarray(streets.segments.geometry.values, dtype=object)
    segment_ids = streets.segments["segment_id"].to_numpy(dtype=int)
    query_idx, tree_idx = shapely.STRtree(segment_geoms).query_nearest(shapely.centroid(anchors), all_matches=True)
    building_segment = np.full(len(anchors), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(building_segment, query_idx, segment_ids[tree_idx])

    logger.info("Street graph: %d nodes, %d edges", graph.number_of_nodes(), graph.number_of_edges())
    return NetworkGraph(graph=graph, cell_node=cell_node.astype(int), building_segment=building_segment.astype(int), streets=streets)


def links_frame(cells: CellSet, network: NetworkGraph) -> pd.DataFrame:
    """Cell -> node and building -> segment links as a table."""
    return pd.DataFrame(
        {"building_id": cells.ids, "node_id": network.cell_node, "segment_id": network.building_segment}
    )
