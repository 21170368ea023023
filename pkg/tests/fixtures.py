"""
Shared fixtures for the test suite.
Small hand-built geometries; larger cities come from app.synthetic.
"""

import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import geopandas as gpd
import numpy as np
from shapely.geometry import LineString, box, mapping

from app.ingest import BuildingSet
from app.spatial_graph import build_contiguity
from app.tessellation import CellSet


def grid_cells(rows: int, cols: int, size: float = 10.0) -> CellSet:
    """rows x cols square cells, ids "r-c", row-major order."""
    ids, polys = [], []
    for r in range(rows):
        for c in range(cols):
            ids.append(f"{r}-{c}")
            polys.append(box(c * size, r * size, (c + 1) * size, (r + 1) * size))
    return CellSet(frame=gpd.GeoDataFrame({"building_id": ids}, geometry=polys))


def grid_graph(rows: int, cols: int):
    return build_contiguity(grid_cells(rows, cols))


def grid_houses(rows: int, cols: int, size: float = 8.0, spacing: float = 20.0, height: Optional[float] = 6.0) -> BuildingSet:
    ids, polys = [], []
    for r in range(rows):
        for c in range(cols):
            x, y = c * spacing, r * spacing
            ids.append(f"h{r}{c}")
            polys.append(box(x, y, x + size, y + size))
    return BuildingSet.from_records(ids, polys, [height] * len(ids))


def street_grid(lines_x: List[float], lines_y: List[float]) -> List[LineString]:
    """Full-length orthogonal streets at the given coordinates."""
    xmin, xmax = min(lines_x), max(lines_x)
    ymin, ymax = min(lines_y), max(lines_y)
    return [LineString([(x, ymin), (x, ymax)]) for x in lines_x] + [LineString([(xmin, y), (xmax, y)]) for y in lines_y]


def write_features(path: Path, features: List[Dict], crs: Optional[str] = None) -> Path:
    data = {"type": "FeatureCollection", "features": features}
    if crs:
        data["crs"] = {"type": "name", "properties": {"name": crs}}
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def feature(geom, **properties) -> Dict:
    return {"type": "Feature", "properties": properties, "geometry": mapping(geom) if not isinstance(geom, dict) else geom}


def random_values(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).lognormal(mean=2.0, sigma=0.7, size=n)
