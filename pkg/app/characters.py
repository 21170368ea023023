"""
Morphometric Characters
Registry of primary characters and their computation into a cell-indexed matrix.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import networkx as nx
import shapely
from scipy import sparse

from .errors import DataError, RegistryError
from .ingest import BuildingSet
from .models import CharacterDescriptor, MissingReport
from .parallel import parallel_map
from .spatial_graph import NO_LINK, ContiguityGraph, NetworkGraph, ball_members, constrained_adjacency, k_order_balls
from .tessellation import BlockSet, CellSet

logger = logging.getLogger(__name__)


@dataclass
class CharacterMatrix:
    """Elements x characters; rows follow cell order, index = building id."""

    frame: pd.DataFrame
    descriptors: List[CharacterDescriptor] = field(default_factory=list)
    missing: MissingReport = field(default_factory=MissingReport)

    @property
    def columns(self) -> List[str]:
        return list(self.frame.columns)

    def __len__(self) -> int:
        return len(self.frame)


@dataclass
class CharacterInputs:
    """Everything a character function may read; derived geometry is cached."""

    buildings: BuildingSet
    cells: CellSet
    contiguity: ContiguityGraph
    network: NetworkGraph
    blocks: Optional[BlockSet] = None
    floor_height: float = 3.0
    large_scale_k: int = 3
    constrained: bool = False

    @cached_property
    def footprints(self) -> np.ndarray:
        return self.buildings.geometries

    @cached_property
    def building_area(self) -> np.ndarray:
        return shapely.area(self.footprints)

    @cached_property
    def cell_area(self) -> np.ndarray:
        return self.cells.areas

    @cached_property
    def building_centroids(self) -> np.ndarray:
        return shapely.get_coordinates(shapely.centroid(self.footprints))

    @cached_property
    def heights(self) -> np.ndarray:
        return self.buildings.frame["height"].to_numpy(dtype=float)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        return constrained_adjacency(self.contiguity, self.blocks if self.constrained else None)

    @cached_property
    def medium_balls(self) -> sparse.csr_matrix:
        return k_order_balls(self.contiguity, 1, self.blocks if self.constrained else None)

    @cached_property
    def large_balls(self) -> sparse.csr_matrix:
        return k_order_balls(self.contiguity, self.large_scale_k, self.blocks if self.constrained else None)

    @cached_property
    def segment_geoms(self) -> np.ndarray:
        return np.asarray(self.network.streets.segments.geometry.values, dtype=object)

    def linked_segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """(mask of buildings with a link, linked segment geometries)."""
        links = self.network.building_segment
        mask = links != NO_LINK
        return mask, self.segment_geoms[links[mask]] if mask.any() else np.empty(0, dtype=object)


CharacterFunc = Callable[[CharacterInputs], np.ndarray]


@dataclass
class RegisteredCharacter:
    descriptor: CharacterDescriptor
    func: CharacterFunc


REGISTRY: Dict[str, RegisteredCharacter] = {}


def register_character(descriptor: CharacterDescriptor, func: CharacterFunc) -> None:
    """
    Add a character to the registry.

    Raises:
        RegistryError: a character with the same name already exists
    """
    if descriptor.name in REGISTRY:
        raise RegistryError(f"Character '{descriptor.name}' is already registered")
    REGISTRY[descriptor.name] = RegisteredCharacter(descriptor=descriptor, func=func)


def character(name: str, element: str, category: str, scale: str, description: str = "", needs_height: bool = False, needs_streets: bool = False):
    """Decorator form of register_character."""

    def wrap(func: CharacterFunc) -> CharacterFunc:
        register_character(
            CharacterDescriptor(
                name=name, element=element, category=category, scale=scale,
                needs_height=needs_height, needs_streets=needs_streets, description=description,
            ),
            func,
        )
        return func

    return wrap


def resolve_registry(names: Optional[List[str]] = None) -> List[CharacterDescriptor]:
    """Descriptors for the requested names (all registered characters when None)."""
    if names is None:
        return [entry.descriptor for entry in REGISTRY.values()]
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise RegistryError(f"Unknown characters: {', '.join(unknown)}")
    duplicated = sorted({n for n in names if names.count(n) > 1})
    if duplicated:
        raise RegistryError(f"Characters listed twice: {', '.join(duplicated)}")
    return [REGISTRY[n].descriptor for n in names]


# ============== GEOMETRY HELPERS ==============

def azimuth_mod90(dx, dy):
    """Bearing of (dx, dy) from north in degrees, modulo 90; rounded to 1e-9 so axis-parallel edges give exactly 0."""
    return np.round(np.degrees(np.arctan2(dx, dy)), 9) % 90.0


def round_significant(values: np.ndarray, digits: int = 12) -> np.ndarray:
    """Round to `digits` significant digits; values equal up to float noise become identical."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    nonzero = np.isfinite(values) & (values != 0)
    magnitude = np.floor(np.log10(np.abs(values[nonzero])))
    scale = 10.0 ** (digits - 1 - magnitude)
    out[nonzero] = np.round(values[nonzero] * scale) / scale
    return out


def _rectangle_sides(geoms: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Short side, long side and azimuth (degrees, mod 90) of the minimum rotated rectangle."""
    envelopes = shapely.oriented_envelope(geoms)
    short = np.zeros(len(geoms))
    long = np.zeros(len(geoms))
    azimuth = np.zeros(len(geoms))
    for i, env in enumerate(envelopes):
        coords = shapely.get_coordinates(env)
        if len(coords) < 4:
            continue
        a = coords[1] - coords[0]
        b = coords[2] - coords[1]
        la, lb = np.hypot(*a), np.hypot(*b)
        short[i], long[i] = min(la, lb), max(la, lb)
        edge = a if la >= lb else b
        azimuth[i] = azimuth_mod90(edge[0], edge[1])
    return short, long, azimuth


def orientation(geoms: np.ndarray) -> np.ndarray:
    """Azimuth of the longest side of the minimum rotated rectangle, modulo 90 degrees."""
    return _rectangle_sides(geoms)[2]


def angular_deviation(a, b) -> np.ndarray:
    """Difference of two orientations given modulo 90 degrees, folded to [0, 45]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 90.0
    return np.minimum(d, 90.0 - d)


# ============== DIMENSION ==============

@character("building_area", "building", "dimension", "small", "Footprint area (m²)")
def building_area(inputs: CharacterInputs) -> np.ndarray:
    return inputs.building_area


@character("building_perimeter", "building", "dimension", "small", "Footprint perimeter (m)")
def building_perimeter(inputs: CharacterInputs) -> np.ndarray:
    return shapely.length(inputs.footprints)


@character("building_height", "building", "dimension", "small", "Building height (m)", needs_height=True)
def building_height(inputs: CharacterInputs) -> np.ndarray:
    return inputs.heights


@character("cell_area", "cell", "dimension", "small", "Tessellation cell area (m²)")
def cell_area(inputs: CharacterInputs) -> np.ndarray:
    return inputs.cell_area


@character("segment_length", "segment", "dimension", "small", "Length of the linked street segment (m)", needs_streets=True)
def segment_length(inputs: CharacterInputs) -> np.ndarray:
    out = np.full(len(inputs.cells), np.nan)
    mask, segments = inputs.linked_segments()
    out[mask] = shapely.length(segments)
    return out


# ============== SHAPE ==============

@character("circular_compactness", "building", "shape", "small", "Area over the area of the minimum enclosing circle")
def circular_compactness(inputs: CharacterInputs) -> np.ndarray:
    radius = shapely.minimum_bounding_radius(inputs.footprints)
    return inputs.building_area / (np.pi * radius ** 2)


@character("convexity", "building", "shape", "small", "Area over convex hull area")
def convexity(inputs: CharacterInputs) -> np.ndarray:
    return inputs.building_area / shapely.area(shapely.convex_hull(inputs.footprints))


@character("rectangularity", "building", "shape", "small", "Area over minimum rotated rectangle area")
def rectangularity(inputs: CharacterInputs) -> np.ndarray:
    return inputs.building_area / shapely.area(shapely.oriented_envelope(inputs.footprints))


@character("elongation", "building", "shape", "small", "Short over long side of the minimum rotated rectangle")
def elongation(inputs: CharacterInputs) -> np.ndarray:
    short, long, _ = _rectangle_sides(inputs.footprints)
    return np.divide(short, long, out=np.full(len(short), np.nan), where=long > 0)


@character("cell_compactness", "cell", "shape", "small", "Isoperimetric quotient 4πA/P² of the cell")
def cell_compactness(inputs: CharacterInputs) -> np.ndarray:
    perimeter = shapely.length(inputs.cells.geometries)
    return 4.0 * np.pi * inputs.cell_area / perimeter ** 2


@character("segment_linearity", "segment", "shape", "small", "Endpoint distance over length of the linked segment", needs_streets=True)
def segment_linearity(inputs: CharacterInputs) -> np.ndarray:
    out = np.full(len(inputs.cells), np.nan)
    mask, segments = inputs.linked_segments()
    if len(segments):
        start = shapely.get_point(segments, 0)
        end = shapely.get_point(segments, -1)
        out[mask] = shapely.distance(start, end) / shapely.length(segments)
    return out


# ============== DISTRIBUTION ==============

@character("shared_walls_ratio", "building", "distribution", "small", "Share of the perimeter touching other buildings")
def shared_walls_ratio(inputs: CharacterInputs, tolerance: float = 1e-6) -> np.ndarray:
    geoms = inputs.footprints
    rows, cols = shapely.STRtree(geoms).query(geoms, predicate="dwithin", distance=tolerance)
    mask = rows != cols
    rows, cols = rows[mask], cols[mask]
    perimeter = shapely.length(geoms)
    out = np.zeros(len(geoms))
    for i in np.unique(rows):
        neighbours = shapely.union_all(geoms[cols[rows == i]])
        shared = shapely.intersection(shapely.boundary(geoms[i]), shapely.buffer(neighbours, tolerance))
        out[i] = shapely.length(shared) / perimeter[i]
    return np.clip(out, 0.0, 1.0)


@character("neighbour_distance", "building", "distribution", "medium", "Mean centroid distance to buildings of adjacent cells (m)")
def neighbour_distance(inputs: CharacterInputs) -> np.ndarray:
    adj = inputs.adjacency.tocoo()
    xy = inputs.building_centroids
    dist = np.hypot(*(xy[adj.row] - xy[adj.col]).T)
    sums = np.bincount(adj.row, weights=dist, minlength=len(xy))
    counts = np.bincount(adj.row, minlength=len(xy))
    return np.divide(sums, counts, out=np.full(len(xy), np.nan), where=counts > 0)


@character("cell_alignment", "cell", "distribution", "medium", "Mean orientation deviation from adjacent cells (degrees)")
def cell_alignment(inputs: CharacterInputs) -> np.ndarray:
    adj = inputs.adjacency.tocoo()
    angles = orientation(inputs.cells.geometries)
    deviation = angular_deviation(angles[adj.row], angles[adj.col])
    n = len(angles)
    sums = np.bincount(adj.row, weights=deviation, minlength=n)
    counts = np.bincount(adj.row, minlength=n)
    return np.divide(sums, counts, out=np.full(n, np.nan), where=counts > 0)


@character("street_alignment", "building", "distribution", "small", "Orientation deviation from the linked segment (degrees)", needs_streets=True)
def street_alignment(inputs: CharacterInputs) -> np.ndarray:
    out = np.full(len(inputs.cells), np.nan)
    mask, segments = inputs.linked_segments()
    if len(segments):
        start = shapely.get_coordinates(shapely.get_point(segments, 0))
        end = shapely.get_coordinates(shapely.get_point(segments, -1))
        delta = end - start
        azimuth = azimuth_mod90(delta[:, 0], delta[:, 1])
        out[mask] = angular_deviation(orientation(inputs.footprints)[mask], azimuth)
    return out


# ============== INTENSITY ==============

@character("coverage_area_ratio", "cell", "intensity", "small", "Building area over cell area")
def coverage_area_ratio(inputs: CharacterInputs) -> np.ndarray:
    return inputs.building_area / inputs.cell_area


def floors(heights: np.ndarray, floor_height: float = 3.0) -> np.ndarray:
    """Storey estimate max(1, round(height / floor_height)); NaN where height is missing."""
    return np.where(np.isfinite(heights), np.maximum(1.0, np.floor(heights / floor_height + 0.5)), np.nan)


@character("floor_area_ratio", "cell", "intensity", "small", "Gross floor area over cell area", needs_height=True)
def floor_area_ratio(inputs: CharacterInputs) -> np.ndarray:
    return inputs.building_area * floors(inputs.heights, inputs.floor_height) / inputs.cell_area


@character("neighbour_density", "cell", "intensity", "large", "Cells per m² within the large-scale ball")
def neighbour_density(inputs: CharacterInputs) -> np.ndarray:
    balls = inputs.large_balls
    counts = np.diff(balls.indptr).astype(float)
    areas = balls @ inputs.cell_area
    return counts / areas


# ============== CONNECTIVITY ==============

def _node_statistic(inputs: CharacterInputs, func: Callable[[nx.MultiGraph, int], float]) -> np.ndarray:
    out = np.full(len(inputs.cells), np.nan)
    if inputs.network.is_empty:
        return out
    cache: Dict[int, float] = {}
    for i, node in enumerate(inputs.network.cell_node):
        if node == NO_LINK:
            continue
        if node not in cache:
            cache[node] = func(inputs.network.graph, int(node))
        out[i] = cache[node]
    return out


def meshedness(subgraph: nx.MultiGraph) -> float:
    """(e - v + 1) / (2v - 5); 0 for fewer than 3 nodes."""
    v = subgraph.number_of_nodes()
    e = subgraph.number_of_edges()
    if v < 3:
        return 0.0
    return (e - v + 1) / (2 * v - 5)


@character("node_degree", "node", "connectivity", "small", "Degree of the linked street node", needs_streets=True)
def node_degree(inputs: CharacterInputs) -> np.ndarray:
    return _node_statistic(inputs, lambda g, node: float(g.degree(node)))


@character("local_meshedness", "node", "connectivity", "large", "Meshedness of the 3-step network neighbourhood of the linked node", needs_streets=True)
def local_meshedness(inputs: CharacterInputs) -> np.ndarray:
    return _node_statistic(inputs, lambda g, node: meshedness(nx.ego_graph(g, node, radius=3)))


def _mean_edge_length(g: nx.MultiGraph, node: int) -> float:
    lengths = [d["length"] for _, _, d in nx.ego_graph(g, node, radius=3).edges(data=True)]
    return float(np.mean(lengths)) if lengths else float("nan")


@character("mean_segment_length", "node", "connectivity", "large", "Mean segment length in the 3-step network neighbourhood (m)", needs_streets=True)
def mean_segment_length(inputs: CharacterInputs) -> np.ndarray:
    return _node_statistic(inputs, _mean_edge_length)


# ============== DIVERSITY ==============

@character("area_diversity", "cell", "diversity", "medium", "Theil index of cell areas over the order-1 neighbourhood")
def area_diversity(inputs: CharacterInputs) -> np.ndarray:
    from .context import theil

    balls = inputs.medium_balls
    areas = inputs.cell_area
    return np.array([theil(areas[ball_members(balls, i)]) for i in range(len(areas))])


# ============== MATRIX ==============

def compute_primary_characters(
    buildings: BuildingSet,
    cells: CellSet,
    contiguity: ContiguityGraph,
    network: NetworkGraph,
    blocks: Optional[BlockSet] = None,
    registry: Optional[List[CharacterDescriptor]] = None,
    floor_height: float = 3.0,
    large_scale_k: int = 3,
    constrained: bool = False,
    threads: Optional[int] = None,
) -> CharacterMatrix:
    """
    Compute every registry character for every cell.

    Building and street values are broadcast to the cell of their building
    (cells and buildings share order).

    Args:
        buildings: Footprints
        cells: Tessellation (same ids and order as buildings)
        contiguity: Cell contiguity graph
        network: Street graph with links
        blocks: Enclosures with assignment, used when constrained
        registry: Characters to compute; the full registry when None
        floor_height: Storey height used by floor_area_ratio (m)
        large_scale_k: Contiguity order of large-scale characters
        constrained: Keep neighbourhoods inside blocks
        threads: Worker threads across characters

    Returns:
        CharacterMatrix with missing values left as NaN and reported
    """
    if buildings.ids != cells.ids or cells.ids != contiguity.ids:
        raise DataError("Buildings, cells and contiguity graph must share ids and order")
    descriptors = registry if registry is not None else resolve_registry()
    inputs = CharacterInputs(
        buildings=buildings, cells=cells, contiguity=contiguity, network=network, blocks=blocks,
        floor_height=floor_height, large_scale_k=large_scale_k, constrained=constrained,
    )
    # shared caches are filled before fan-out
    _ = inputs.medium_balls, inputs.large_balls, inputs.building_area, inputs.cell_area

    def compute(descriptor: CharacterDescriptor) -> np.ndarray:
        values = np.asarray(REGISTRY[descriptor.name].func(inputs), dtype=float)
        if values.shape != (len(cells),):
            raise DataError(f"Character '{descriptor.name}' returned {values.shape}, expected ({len(cells)},)")
        values[~np.isfinite(values)] = np.nan
        return round_significant(values)

    columns = parallel_map(compute, descriptors, threads=threads)
    frame = pd.DataFrame({d.name: col for d, col in zip(descriptors, columns)}, index=pd.Index(cells.ids, name="building_id"))

    missing = MissingReport(missing_rate={name: float(frame[name].isna().mean()) for name in frame.columns})
    for d in descriptors:
        rate = missing.missing_rate[d.name]
        if rate > 0 and (d.needs_height or d.needs_streets):
            logger.warning("Character %s missing for %.1f%% of cells (%s)", d.name, 100 * rate, "height" if d.needs_height else "streets")
    logger.info("Computed %d primary characters for %d cells", len(descriptors), len(frame))
    return CharacterMatrix(frame=frame, descriptors=list(descriptors), missing=missing)


def impute_missing(frame: pd.DataFrame, drop_threshold: float = 0.5) -> Tuple[pd.DataFrame, MissingReport]:
    """
    Median-impute missing values column by column.

    Columns with more than `drop_threshold` missing (or nothing but missing) are dropped.
    """
    report = MissingReport()
    kept = []
    for name in frame.columns:
        column = frame[name]
        rate = float(column.isna().mean()) if len(column) else 0.0
        report.missing_rate[name] = rate
        if rate > drop_threshold or column.notna().sum() == 0:
            report.dropped.append(name)
            logger.warning("Dropping column %s: %.1f%% missing", name, 100 * rate)
            continue
        if rate > 0:
            report.imputed[name] = float(column.median())
        kept.append(name)
    out = frame[kept].copy()
    if report.imputed:
        out = out.fillna(value=report.imputed)
    return out, report
