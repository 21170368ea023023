"""
Ingest
Load, validate and repair building footprints and street centrelines from GeoJSON.
Coordinates are assumed to be in a projected metric CRS; nothing is reprojected.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import geopandas as gpd
import numpy as np
import shapely
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from shapely.geometry import LineString, MultiLineString, Polygon, shape

from .config import InputConfig
from .errors import ConfigError, DataError, format_ids
from .models import IngestReport, SkippedFeature

logger = logging.getLogger(__name__)

GEOGRAPHIC_CRS_MARKERS = ("4326", "CRS84", "4258", "4269")
DEGREE_AREA_THRESHOLD = 1e-6


@dataclass
class BuildingSet:
    """Footprints (one simple polygon each) with optional heights, in input order."""

    frame: gpd.GeoDataFrame  # columns: building_id, height, geometry
    report: IngestReport = field(default_factory=lambda: IngestReport(source="", kind="buildings"))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> List[str]:
        return self.frame["building_id"].tolist()

    @property
    def geometries(self) -> np.ndarray:
        return np.asarray(self.frame.geometry.values, dtype=object)

    @classmethod
    def from_records(cls, ids: List[str], polygons: List[Polygon], heights: Optional[List[Optional[float]]] = None) -> "BuildingSet":
        """Build a set directly from already clean geometries (fixtures, synthetic cities)."""
        if heights is None:
            heights = [None] * len(ids)
        frame = gpd.GeoDataFrame(
            {"building_id": [str(i) for i in ids], "height": [np.nan if h is None else float(h) for h in heights]},
            geometry=list(polygons),
        )
        duplicates = sorted(k for k, v in Counter(frame["building_id"]).items() if v > 1)
        if duplicates:
            raise DataError(f"Duplicate building ids: {format_ids(duplicates)}")
        return cls(frame=frame, report=IngestReport(source="memory", kind="buildings", loaded=len(frame)))


@dataclass
class StreetNetwork:
    """Planarised street centrelines with derived junction nodes."""

    segments: gpd.GeoDataFrame  # columns: segment_id, node_start, node_end, length, geometry
    nodes: gpd.GeoDataFrame  # columns: node_id, geometry
    report: IngestReport = field(default_factory=lambda: IngestReport(source="", kind="streets"))

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def is_empty(self) -> bool:
        return len(self.segments) == 0

    @classmethod
    def empty(cls) -> "StreetNetwork":
        return cls(
            segments=gpd.GeoDataFrame({"segment_id": [], "node_start": [], "node_end": [], "length": []}, geometry=[]),
            nodes=gpd.GeoDataFrame({"node_id": []}, geometry=[]),
        )


# ============== GEOJSON READING ==============

def _read_feature_collection(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Input file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise DataError(f"{path} is not a GeoJSON FeatureCollection")
    return data


def _declares_geographic_crs(data: Dict[str, Any]) -> bool:
    crs_name = str(((data.get("crs") or {}).get("properties") or {}).get("name", ""))
    return any(marker in crs_name for marker in GEOGRAPHIC_CRS_MARKERS)


def looks_geographic(geometries: List[Any]) -> bool:
    """
    Heuristic for degree coordinates: everything inside lon/lat bounds and
    footprints far too small to be metres.
    """
    if not geometries:
        return False
    xmin, ymin, xmax, ymax = shapely.total_bounds(np.asarray(geometries, dtype=object))
    inside = -180.0 <= xmin and xmax <= 180.0 and -90.0 <= ymin and ymax <= 90.0
    if not inside:
        return False
    areas = shapely.area(np.asarray(geometries, dtype=object))
    return bool(np.median(areas) < DEGREE_AREA_THRESHOLD)


# ============== BUILDINGS ==============

def polygon_parts(geom) -> List[Polygon]:
    """All non-empty polygons inside any (possibly nested) geometry."""
    parts: List[Polygon] = []
    for part in shapely.get_parts(geom):
        if isinstance(part, Polygon):
            if not part.is_empty:
                parts.append(part)
        elif part.geom_type in ("MultiPolygon", "GeometryCollection"):
            parts.extend(polygon_parts(part))
    return parts


def repair_footprint(geom) -> Tuple[Optional[Polygon], bool, int]:
    """
    Turn a raw footprint into one valid polygon.

    Args:
        geom: Polygon or MultiPolygon

    Returns:
        (largest polygon or None, repaired flag, number of discarded parts)
    """
    repaired = False
    if not geom.is_valid:
        geom = shapely.make_valid(geom)
        repaired = True
    parts = [p for p in polygon_parts(geom) if p.area > 0]
    if not parts:
        return None, repaired, 0
    largest = parts[int(np.argmax([p.area for p in parts]))]
    return shapely.normalize(largest), repaired, len(parts) - 1


def _parse_height(value: Any) -> Optional[float]:
    try:
        height = float(value)
    except (TypeError, ValueError):
        return None
    if not np.isfinite(height) or height < 0:
        return None
    return height


def fill_missing_ids(ids: List[Optional[str]]) -> List[str]:
    """Give id-less features the next sequential number not already used as an explicit id."""
    used = {feature_id for feature_id in ids if feature_id is not None}
    counter = 0
    filled: List[str] = []
    for feature_id in ids:
        if feature_id is None:
            while str(counter) in used:
                counter += 1
            feature_id = str(counter)
            used.add(feature_id)
        filled.append(feature_id)
    return filled


def load_buildings(path: Union[str, Path], config: Optional[InputConfig] = None) -> BuildingSet:
    """
    Load building footprints from a GeoJSON FeatureCollection.

    MultiPolygons keep their largest part; invalid rings are rebuilt; features
    that cannot be turned into a polygon with nonzero area are skipped and reported.

    Args:
        path: GeoJSON file with Polygon/MultiPolygon features in metres
        config: Input settings (id/height properties, projected assertion)

    Returns:
        BuildingSet in input order

    Raises:
        DataError: missing file, geographic coordinates, duplicated ids, nothing loadable
        ConfigError: assume_projected switched off
    """
    config = config or InputConfig()
    if not config.assume_projected:
        raise ConfigError("Input must be in a projected metric CRS; set input.assume_projected = true after projecting")

    data = _read_feature_collection(path)
    if _declares_geographic_crs(data):
        raise DataError(f"{path} declares a geographic CRS; project the data to a metric CRS first")

    report = IngestReport(source=str(path), kind="buildings")
    ids: List[Optional[str]] = []
    polygons: List[Polygon] = []
    heights: List[Optional[float]] = []

    for index, feature in enumerate(data.get("features") or []):
        props = feature.get("properties") or {}
        raw_id = props.get(config.id_property) if config.id_property else None
        feature_id = None if raw_id is None else str(raw_id)
        geometry = feature.get("geometry")
        if not geometry or geometry.get("type") not in ("Polygon", "MultiPolygon"):
            report.skipped_features.append(SkippedFeature(index=index, feature_id=feature_id, reason="not a polygon"))
            continue
        try:
            geom = shape(geometry)
        except Exception as e:
            report.skipped_features.append(SkippedFeature(index=index, feature_id=feature_id, reason=f"unreadable geometry: {e}"))
            continue
        if geom.is_empty or not np.all(np.isfinite(shapely.get_coordinates(geom))):
            report.skipped_features.append(SkippedFeature(index=index, feature_id=feature_id, reason="empty or non-finite geometry"))
            continue

        polygon, repaired, discarded = repair_footprint(geom)
        if polygon is None:
            report.skipped_features.append(SkippedFeature(index=index, feature_id=feature_id, reason="unrepairable geometry"))
            logger.warning("Skipping feature %d (%s): unrepairable geometry", index, feature_id)
            continue
        if repaired:
            report.repaired += 1
        if discarded:
            report.exploded += 1
            logger.warning("Feature %d (%s): kept largest of %d polygon parts", index, feature_id, discarded + 1)

        height = _parse_height(props.get(config.height_property)) if config.height_property else None
        if height is None:
            report.missing_heights += 1
        ids.append(feature_id)
        polygons.append(polygon)
        heights.append(height)

    if looks_geographic(polygons):
        raise DataError(f"{path} appears to use degree coordinates; project it to a metric CRS first")

    final_ids = fill_missing_ids(ids)
    report.generated_ids = sum(feature_id is None for feature_id in ids)
    duplicates = sorted(k for k, v in Counter(final_ids).items() if v > 1)
    if duplicates:
        raise DataError(f"Duplicate building ids in {path}: {format_ids(duplicates)}")
    if not polygons:
        raise DataError(f"No usable building footprints in {path}")

    report.skipped = len(report.skipped_features)
    report.loaded = len(polygons)
    logger.info(
        "Loaded %d buildings from %s (repaired %d, exploded %d, skipped %d)",
        report.loaded, path, report.repaired, report.exploded, report.skipped,
    )
    frame = gpd.GeoDataFrame(
        {"building_id": final_ids, "height": [np.nan if h is None else h for h in heights]},
        geometry=polygons,
    )
    return BuildingSet(frame=frame, report=report)


# ============== STREETS ==============

def cluster_points(points: np.ndarray, tolerance: float) -> np.ndarray:
    """
    Representative index of every point. Points chained by gaps within the
    tolerance form one cluster, represented by its lowest index.
    """
    n = len(points)
    if tolerance <= 0 or n < 2:
        return np.arange(n)
    pairs = cKDTree(points).query_pairs(r=tolerance, output_type="ndarray")
    links = sparse.coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(links, directed=False)
    representative = np.full(labels.max() + 1, n, dtype=int)
    np.minimum.at(representative, labels, np.arange(n))
    return representative[labels]


def _line_ends(lines: List[LineString]) -> np.ndarray:
    return np.array([[line.coords[0][:2], line.coords[-1][:2]] for line in lines], dtype=float).reshape(-1, 2)


def _with_ends(line: LineString, start: np.ndarray, end: np.ndarray) -> LineString:
    coords = shapely.get_coordinates(line)
    coords[0] = start
    coords[-1] = end
    return LineString(coords)


def _snap_endpoints(lines: List[LineString], tolerance: float) -> List[LineString]:
    """Move endpoints closer than tolerance onto a shared representative point."""
    if tolerance <= 0 or not lines:
        return lines
    ends = _line_ends(lines)
    snapped_ends = ends[cluster_points(ends, tolerance)].reshape(-1, 2, 2)
    return [_with_ends(line, start, end) for line, (start, end) in zip(lines, snapped_ends)]


def _merge_close_nodes(pieces: List[LineString], tolerance: float) -> List[LineString]:
    """
    Collapse noded piece endpoints closer than tolerance into one node.
    Pieces that shrink to a point and pieces that become duplicates are dropped.
    """
    if tolerance <= 0 or not pieces:
        return pieces
    ends = _line_ends(pieces)
    merged_ends = ends[cluster_points(ends, tolerance)].reshape(-1, 2, 2)
    kept: List[LineString] = []
    seen = set()
    for piece, (start, end) in zip(pieces, merged_ends):
        line = _with_ends(piece, start, end)
        if np.array_equal(start, end) and line.length <= 2.0 * tolerance:
            continue
        key = shapely.normalize(line).wkb
        if key in seen:
            continue
        seen.add(key)
        kept.append(line)
    return kept


def _piece_key(piece: LineString) -> Tuple:
    return (tuple(np.round(piece.coords[0], 9)), tuple(np.round(piece.coords[-1], 9)), piece.length)


def planarize(lines: List[LineString], tolerance: float) -> Tuple[List[LineString], np.ndarray]:
    """
    Node a set of centrelines: snap endpoints, split at crossings, merge
    duplicated linework, then merge nodes closer than the tolerance and drop
    zero-length pieces.

    Returns:
        (segments sorted deterministically, node coordinates)
    """
    lines = _snap_endpoints(lines, tolerance)
    noded = shapely.unary_union(np.asarray(lines, dtype=object))
    pieces = [g for g in shapely.get_parts(noded) if isinstance(g, LineString) and g.length > 0]
    pieces = _merge_close_nodes(sorted(pieces, key=_piece_key), tolerance)
    pieces.sort(key=_piece_key)

    node_coords: Dict[Tuple[float, float], int] = {}
    for piece in pieces:
        for coord in (piece.coords[0], piece.coords[-1]):
            node_coords.setdefault(tuple(coord), len(node_coords))
    nodes = np.array(list(node_coords.keys())) if node_coords else np.empty((0, 2))
    return pieces, nodes


def load_streets(path: Union[str, Path], snap_tolerance: float = 0.1) -> StreetNetwork:
    """
    Load and planarise street centrelines.

    Args:
        path: GeoJSON FeatureCollection of LineString/MultiLineString features
        snap_tolerance: Endpoints closer than this (metres) become one node

    Returns:
        StreetNetwork with integer segment and node ids

    Raises:
        DataError: missing file or no line features
    """
    data = _read_feature_collection(path)
    if _declares_geographic_crs(data):
        raise DataError(f"{path} declares a geographic CRS; project the data to a metric CRS first")

    report = IngestReport(source=str(path), kind="streets")
    lines: List[LineString] = []
    for index, feature in enumerate(data.get("features") or []):
        geometry = feature.get("geometry")
        feature_id = (feature.get("properties") or {}).get("id")
        if not geometry or geometry.get("type") not in ("LineString", "MultiLineString"):
            report.skipped_features.append(SkippedFeature(index=index, feature_id=None if feature_id is None else str(feature_id), reason="not a line"))
            continue
        geom = shape(geometry)
        parts = list(geom.geoms) if isinstance(geom, MultiLineString) else [geom]
        for part in parts:
            if part.is_empty or part.length == 0 or not np.all(np.isfinite(part.coords)):
                continue
            lines.append(part)

    report.skipped = len(report.skipped_features)
    if report.skipped:
        logger.warning("Skipped %d non-line features in %s", report.skipped, path)
    if not lines:
        raise DataError(f"No street centrelines in {path}")

    network = build_network(lines, snap_tolerance)
    network.report = report
    report.loaded = len(network.segments)
    logger.info("Loaded %d street segments, %d nodes from %s", len(network.segments), len(network.nodes), path)
    return network


def build_network(lines: List[LineString], snap_tolerance: float = 0.1) -> StreetNetwork:
    """Planarise in-memory centrelines into a StreetNetwork."""
    if not lines:
        return StreetNetwork.empty()
    pieces, node_coords = planarize(lines, snap_tolerance)
    index = {tuple(c): i for i, c in enumerate(map(tuple, node_coords))}
    segments = gpd.GeoDataFrame(
        {
            "segment_id": np.arange(len(pieces), dtype=int),
            "node_start": [index[tuple(p.coords[0])] for p in pieces],
            "node_end": [index[tuple(p.coords[-1])] for p in pieces],
            "length": [p.length for p in pieces],
        },
        geometry=pieces,
    )
    nodes = gpd.GeoDataFrame(
        {"node_id": np.arange(len(node_coords), dtype=int)},
        geometry=shapely.points(node_coords) if len(node_coords) else [],
    )
    return StreetNetwork(segments=segments, nodes=nodes, report=IngestReport(source="memory", kind="streets", loaded=len(pieces)))
