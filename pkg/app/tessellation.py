"""
Tessellation
Morphological tessellation (one cell per building, limited around each footprint)
and street-bounded enclosures with the cell -> block assignment.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import geopandas as gpd
import numpy as np
import shapely
from scipy.spatial import Voronoi
from shapely.geometry import Polygon, box

from .errors import DataError, format_ids
from .ingest import BuildingSet, StreetNetwork, polygon_parts

logger = logging.getLogger(__name__)

OUTSIDE_BLOCK = -1
OVERLAP_TOLERANCE = 1e-6
LIMIT_QUAD_SEGS = 16  # same arc resolution as Polygon.buffer


@dataclass
class CellSet:
    """Tessellation cells in building order."""

    frame: gpd.GeoDataFrame  # columns: building_id, geometry
    limit: float = 100.0

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> List[str]:
        return self.frame["building_id"].tolist()

    @property
    def geometries(self) -> np.ndarray:
        return np.asarray(self.frame.geometry.values, dtype=object)

    @property
    def areas(self) -> np.ndarray:
        return shapely.area(self.geometries)

    def extent(self) -> Polygon:
        """Bounding rectangle of all cells."""
        return box(*shapely.total_bounds(self.geometries))


@dataclass
class BlockSet:
    """Faces of the planarised street network plus the cell -> block map."""

    frame: gpd.GeoDataFrame  # columns: block_id, geometry
    assignment: Optional[np.ndarray] = None  # per cell block_id, OUTSIDE_BLOCK if none

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def geometries(self) -> np.ndarray:
        return np.asarray(self.frame.geometry.values, dtype=object)


# ============== MORPHOLOGICAL TESSELLATION ==============

def check_overlaps(ids: List[str], geoms: np.ndarray, tolerance: float = OVERLAP_TOLERANCE) -> None:
    """Raise DataError naming every pair of footprints sharing more than `tolerance` m² of area."""
    tree = shapely.STRtree(geoms)
    left, right = tree.query(geoms, predicate="intersects")
    mask = left < right
    left, right = left[mask], right[mask]
    if len(left) == 0:
        return
    areas = shapely.area(shapely.intersection(geoms[left], geoms[right]))
    bad = areas > tolerance
    if np.any(bad):
        pairs = [f"({ids[i]}, {ids[j]})" for i, j in zip(left[bad], right[bad])]
        raise DataError(f"Overlapping buildings: {format_ids(pairs)}")


def limit_region(geoms: np.ndarray, limit: float) -> np.ndarray:
    """Area within `limit` of each footprint, with LIMIT_QUAD_SEGS segments per quarter circle."""
    return shapely.buffer(geoms, limit, quad_segs=LIMIT_QUAD_SEGS)


def _erode(ids: List[str], geoms: np.ndarray, distance: float) -> np.ndarray:
    """Inward offset; buildings that vanish keep their original footprint."""
    if distance <= 0:
        return geoms
    eroded = shapely.buffer(geoms, -distance, join_style="mitre")
    vanished = shapely.is_empty(eroded) | (shapely.area(eroded) <= 0)
    for i in np.flatnonzero(vanished):
        logger.warning("Building %s vanishes under erosion %.4g m; using its unmodified footprint", ids[i], distance)
    eroded[vanished] = geoms[vanished]
    return eroded


def _generator_points(ids: List[str], geoms: np.ndarray, densify: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Densified boundary vertices and the index of the building each belongs to,
    sorted by coordinate so the diagram does not depend on input order.
    """
    boundaries = shapely.segmentize(shapely.boundary(geoms), densify)
    coords, owner = shapely.get_coordinates(boundaries, return_index=True)
    id_rank = np.empty(len(ids), dtype=int)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    order = np.lexsort((id_rank[owner], coords[:, 1], coords[:, 0]))
    coords, owner = coords[order], owner[order]
    # shared vertices go to the building with the smallest id
    _, first = np.unique(coords, axis=0, return_index=True)
    first.sort()
    return coords[first], owner[first]


def _frame_points(bounds: np.ndarray, margin: float, spacing: float) -> np.ndarray:
    """Ring of far-away points that makes every generator region finite."""
    xmin, ymin, xmax, ymax = bounds
    frame = box(xmin - margin, ymin - margin, xmax + margin, ymax + margin).exterior
    return shapely.get_coordinates(shapely.segmentize(frame, spacing))[:-1]


def _voronoi_polygons(points: np.ndarray, n_generators: int) -> np.ndarray:
    vor = Voronoi(points)
    regions = [vor.regions[r] for r in vor.point_region[:n_generators]]
    if any(-1 in region or len(region) < 3 for region in regions):
        raise DataError("Voronoi diagram has unbounded generator regions; frame too small")
    sizes = np.fromiter((len(r) for r in regions), dtype=int, count=len(regions))
    vertex_ids = np.concatenate(regions)
    ring_index = np.repeat(np.arange(len(regions)), sizes)
    rings = shapely.linearrings(vor.vertices[vertex_ids], indices=ring_index)
    return shapely.polygons(rings)


def _dissolve(polygons: np.ndarray, owner: np.ndarray, n: int) -> np.ndarray:
    order = np.argsort(owner, kind="stable")
    groups = np.split(polygons[order], np.cumsum(np.bincount(owner, minlength=n))[:-1])
    dissolved = np.empty(n, dtype=object)
    for i, group in enumerate(groups):
        try:
            dissolved[i] = shapely.coverage_union_all(group)
        except shapely.errors.GEOSException:
            dissolved[i] = shapely.union_all(group)
    return dissolved


def drop_slivers(geom, min_area: float):
    """Remove polygon parts smaller than min_area."""
    parts = [p for p in polygon_parts(geom) if p.area >= min_area]
    if not parts:
        return Polygon()
    if len(parts) == 1:
        return parts[0]
    return shapely.multipolygons(parts)


def _claim_footprints(cells: np.ndarray, geoms: np.ndarray) -> np.ndarray:
    """Each cell gains its own footprint and loses every other one."""
    cells = shapely.union(cells, geoms)
    tree = shapely.STRtree(geoms)
    cell_idx, geom_idx = tree.query(cells, predicate="intersects")
    foreign = cell_idx != geom_idx
    for i in np.unique(cell_idx[foreign]):
        others = geom_idx[foreign & (cell_idx == i)]
        cells[i] = shapely.difference(cells[i], shapely.union_all(geoms[others]))
    return cells


def morphological_tessellation(
    buildings: BuildingSet,
    limit: float = 100.0,
    densify: float = 0.5,
    erosion: float = 0.0,
    separation: float = 1e-4,
    sliver_area: float = 1e-6,
) -> CellSet:
    """
    Voronoi-based tessellation of the space around building footprints.

    Args:
        buildings: Valid, non-overlapping footprints
        limit: Maximum distance of any cell point from its building (m)
        densify: Spacing of boundary vertices fed to the Voronoi diagram (m)
        erosion: Inward offset applied before densification (m)
        separation: Minimum inward offset separating touching buildings (m)
        sliver_area: Cell parts below this area are dropped (m²)

    Returns:
        CellSet with exactly one cell per building, in building order

    Raises:
        DataError: buildings overlapping after erosion
    """
    ids = buildings.ids
    geoms = buildings.geometries
    n = len(geoms)
    if n == 0:
        raise DataError("Cannot tessellate an empty building set")

    shrunk = _erode(ids, geoms, max(erosion, separation))
    check_overlaps(ids, shrunk)

    points, owner = _generator_points(ids, shrunk, densify)
    margin = 4.0 * limit + 10.0
    frame = _frame_points(shapely.total_bounds(geoms), margin, spacing=limit)
    polygons = _voronoi_polygons(np.vstack([points, frame]), len(points))
    logger.debug("Voronoi diagram over %d generator points", len(points))

    cells = _dissolve(polygons, owner, n)
    cells = shapely.intersection(cells, limit_region(geoms, limit))
    cells = _claim_footprints(cells, geoms)
    cells = np.array([drop_slivers(shapely.make_valid(c), sliver_area) for c in cells], dtype=object)

    logger.info("Tessellated %d buildings (limit %.4g m, densify %.4g m)", n, limit, densify)
    frame_out = gpd.GeoDataFrame({"building_id": ids}, geometry=list(cells))
    return CellSet(frame=frame_out, limit=limit)


# ============== ENCLOSURES ==============

def _face_key(face) -> Tuple[float, float, float]:
    point = face.representative_point()
    return (round(point.x, 6), round(point.y, 6), round(face.area, 6))


def generate_enclosures(streets: StreetNetwork, extent: Polygon) -> BlockSet:
    """
    Polygonise street segments together with the extent boundary.

    Args:
        streets: Planarised network (may be empty)
        extent: Study-area polygon

    Returns:
        BlockSet with block ids in a deterministic spatial order
    """
    linework = [extent.boundary]
    if not streets.is_empty:
        clipped = shapely.intersection(np.asarray(streets.segments.geometry.values, dtype=object), extent)
        linework.extend(g for g in clipped if not g.is_empty)
    noded = shapely.union_all(np.asarray(linework, dtype=object))
    faces = [f for f in shapely.get_parts(shapely.polygonize(shapely.get_parts(noded))) if f.area > 0]
    if not faces:
        logger.warning("Street network encloses no faces; using the whole extent as one block")
        faces = [extent]
    faces.sort(key=_face_key)
    logger.info("Generated %d enclosures", len(faces))
    frame = gpd.GeoDataFrame({"block_id": np.arange(len(faces), dtype=int)}, geometry=faces)
    return BlockSet(frame=frame)


def assign_cells_to_blocks(cells: CellSet, blocks: BlockSet) -> np.ndarray:
    """
    Assign every cell to the block it overlaps most.

    Ties go to the lower block id; cells overlapping no block get OUTSIDE_BLOCK.
    The map is also stored on `blocks.assignment`.
    """
    cell_geoms = cells.geometries
    block_geoms = blocks.geometries
    block_ids = blocks.frame["block_id"].to_numpy()
    assignment = np.full(len(cell_geoms), OUTSIDE_BLOCK, dtype=int)

    if len(block_geoms):
        tree = shapely.STRtree(block_geoms)
        cell_idx, block_idx = tree.query(cell_geoms, predicate="intersects")
        areas = shapely.area(shapely.intersection(cell_geoms[cell_idx], block_geoms[block_idx]))
        # visit candidates by ascending block id so a later equal area never wins
        order = np.lexsort((block_ids[block_idx], cell_idx))
        best_area = np.zeros(len(cell_geoms))
        for i, b, a in zip(cell_idx[order], block_idx[order], areas[order]):
            if a > 0 and a > best_area[i] * (1 + 1e-12):
                best_area[i] = a
                assignment[i] = block_ids[b]

    outside = int(np.sum(assignment == OUTSIDE_BLOCK))
    if outside:
        logger.warning("%d cells overlap no block", outside)
    blocks.assignment = assignment
    return assignment
