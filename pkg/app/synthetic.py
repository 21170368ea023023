"""
Synthetic City Generator
Planted two-tissue cities and random footprint layouts for fixtures, demos and tests.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import geopandas as gpd
import numpy as np
import pandas as pd
from shapely import affinity
from shapely.geometry import LineString, Polygon, box

from .artifacts import ArtifactStore
from .ingest import BuildingSet, StreetNetwork, build_network

# Tissue A: detached houses on a regular grid
HOUSE_SIZE = 8.0
HOUSE_SPACING = 20.0
HOUSE_GRID = 40
HOUSE_STREET_EVERY = 5  # houses between streets
HOUSE_HEIGHT = 6.0

# Tissue B: perimeter blocks of attached-looking rows
ROW_LONG = 30.0
ROW_SHORT = 15.0
ROW_GAP = 2.0
ROW_SETBACK = 6.0
BLOCK_GRID = 14
ROW_HEIGHT = 15.0

# Street grids run STREET_MARGIN pitches past the buildings, so no building
# links to a node on the network boundary
STREET_MARGIN = 3
TISSUE_GAP = 700.0  # keeps the two street grids, margins included, apart

# Just past the widest half-gap between neighbours (6 m + jitter): boundary
# cells then reach as far as interior ones
PLANTED_LIMIT = 7.0

TISSUE_LABELS = {"detached": 0, "perimeter": 1}


@dataclass
class PlantedCity:
    """Buildings, street centrelines and the tissue every building was planted in."""

    buildings: BuildingSet
    street_lines: List[LineString]
    tissue: pd.Series  # building_id -> tissue name
    limit: float = PLANTED_LIMIT  # tessellation limit the city is laid out for

    @property
    def labels(self) -> np.ndarray:
        return self.tissue.map(TISSUE_LABELS).to_numpy(dtype=int)

    def streets(self, snap_tolerance: float = 0.1) -> StreetNetwork:
        return build_network(self.street_lines, snap_tolerance)


def _street_grid(xs: np.ndarray, ys: np.ndarray) -> List[LineString]:
    """Full-length vertical lines at `xs` and horizontal lines at `ys`."""
    lines = [LineString([(float(x), float(ys[0])), (float(x), float(ys[-1]))]) for x in xs]
    lines += [LineString([(float(xs[0]), float(y)), (float(xs[-1]), float(y))]) for y in ys]
    return lines


def _detached_tissue(rng: np.random.Generator, jitter: float) -> Tuple[List[Polygon], List[float], List[LineString], float]:
    polygons, heights = [], []
    half = HOUSE_SIZE / 2
    for i in range(HOUSE_GRID):
        for j in range(HOUSE_GRID):
            cx = HOUSE_SPACING * i + HOUSE_SPACING / 2 + rng.uniform(-jitter, jitter)
            cy = HOUSE_SPACING * j + HOUSE_SPACING / 2 + rng.uniform(-jitter, jitter)
            polygons.append(box(cx - half, cy - half, cx + half, cy + half))
            heights.append(float(max(3.0, rng.normal(HOUSE_HEIGHT, 0.5))))

    width = HOUSE_GRID * HOUSE_SPACING
    pitch = HOUSE_STREET_EVERY * HOUSE_SPACING
    steps = np.arange(-STREET_MARGIN, HOUSE_GRID // HOUSE_STREET_EVERY + STREET_MARGIN + 1) * pitch
    return polygons, heights, _street_grid(steps, steps), width


def _perimeter_block(x0: float, y0: float) -> List[Polygon]:
    """Eight rows around a courtyard: three along each long side, one on each short side."""
    rows = []
    for k in range(3):
        x = x0 + k * (ROW_LONG + ROW_GAP)
        rows.append(box(x, y0, x + ROW_LONG, y0 + ROW_SHORT))
    top = y0 + ROW_SHORT + ROW_GAP + ROW_LONG + ROW_GAP
    for k in range(3):
        x = x0 + k * (ROW_LONG + ROW_GAP)
        rows.append(box(x, top, x + ROW_LONG, top + ROW_SHORT))
    side_y = y0 + ROW_SHORT + ROW_GAP
    width = 3 * ROW_LONG + 2 * ROW_GAP
    rows.append(box(x0, side_y, x0 + ROW_SHORT, side_y + ROW_LONG))
    rows.append(box(x0 + width - ROW_SHORT, side_y, x0 + width, side_y + ROW_LONG))
    return rows


def _perimeter_tissue(rng: np.random.Generator, x_origin: float, jitter: float) -> Tuple[List[Polygon], List[float], List[LineString]]:
    block_w = 3 * ROW_LONG + 2 * ROW_GAP
    block_h = 2 * ROW_SHORT + ROW_LONG + 2 * ROW_GAP
    pitch_x = block_w + 2 * ROW_SETBACK
    pitch_y = block_h + 2 * ROW_SETBACK
    polygons, heights = [], []
    for i in range(BLOCK_GRID):
        for j in range(BLOCK_GRID):
            x0 = x_origin + i * pitch_x + ROW_SETBACK
            y0 = j * pitch_y + ROW_SETBACK
            for row in _perimeter_block(x0, y0):
                dx, dy = rng.uniform(-jitter, jitter, size=2)
                polygons.append(affinity.translate(row, dx, dy))
                heights.append(float(max(6.0, rng.normal(ROW_HEIGHT, 1.0))))

    steps = np.arange(-STREET_MARGIN, BLOCK_GRID + STREET_MARGIN + 1)
    return polygons, heights, _street_grid(x_origin + steps * pitch_x, steps * pitch_y)


def generate_planted_city(seed: int = 0, jitter: float = 0.5) -> PlantedCity:
    """
    Two-tissue synthetic city: a 40 x 40 grid of 8 x 8 m detached houses at 20 m
    spacing in the west, 14 x 14 perimeter blocks of 30 x 15 m rows with 2 m gaps
    in the east, TISSUE_GAP apart. Each tissue has its own street grid running
    STREET_MARGIN pitches past its buildings. Tessellate with `city.limit`.

    Args:
        seed: Random seed of positional and height jitter
        jitter: Maximum positional jitter of each footprint (m); keep below ROW_GAP / 2

    Returns:
        PlantedCity with 1,600 detached and 1,568 perimeter-block buildings
    """
    rng = np.random.default_rng(seed)
    house_polys, house_heights, house_lines, width = _detached_tissue(rng, jitter)
    row_polys, row_heights, row_lines = _perimeter_tissue(rng, width + TISSUE_GAP, jitter)

    ids = [f"d{i:05d}" for i in range(len(house_polys))] + [f"p{i:05d}" for i in range(len(row_polys))]
    buildings = BuildingSet.from_records(ids, house_polys + row_polys, house_heights + row_heights)
    tissue = pd.Series(
        ["detached"] * len(house_polys) + ["perimeter"] * len(row_polys),
        index=pd.Index(ids, name="building_id"),
        name="category",
    )
    return PlantedCity(buildings=buildings, street_lines=house_lines + row_lines, tissue=tissue)


def random_rectangles(n: int, seed: int = 0, cell: float = 30.0) -> BuildingSet:
    """
    n non-overlapping, randomly sized and rotated rectangles on a jittered grid.

    Every rectangle fits inside its own `cell` x `cell` square.
    """
    rng = np.random.default_rng(seed)
    columns = int(np.ceil(np.sqrt(n)))
    polygons = []
    for i in range(n):
        col, row = divmod(i, columns)
        w, h = rng.uniform(0.15 * cell, 0.6 * cell, size=2)
        reach = np.hypot(w, h) / 2
        slack = max(0.0, cell / 2 - reach - 0.5)
        cx = col * cell + cell / 2 + rng.uniform(-slack, slack)
        cy = row * cell + cell / 2 + rng.uniform(-slack, slack)
        rect = box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        polygons.append(affinity.rotate(rect, rng.uniform(0.0, 180.0), origin="centroid"))
    heights = rng.uniform(3.0, 30.0, size=n).tolist()
    return BuildingSet.from_records([str(i) for i in range(n)], polygons, heights)


def write_city(city: PlantedCity, directory: Union[str, Path]) -> Tuple[Path, Path, Path]:
    """
    Write a planted city as input files.

    Returns:
        (buildings GeoJSON, streets GeoJSON, tissue CSV usable as a validation layer)
    """
    store = ArtifactStore(Path(directory))
    frame = city.buildings.frame
    buildings = gpd.GeoDataFrame(
        {"id": frame["building_id"], "height": frame["height"]}, geometry=list(frame.geometry.values)
    )
    streets = gpd.GeoDataFrame({"id": np.arange(len(city.street_lines))}, geometry=city.street_lines)
    b_path = store.write_geojson("buildings.geojson", buildings)
    s_path = store.write_geojson("streets.geojson", streets)
    t_path = store.write_csv("tissue.csv", city.tissue.to_frame())
    return b_path, s_path, t_path
