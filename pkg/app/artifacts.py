"""
Artifacts
Deterministic reading and writing of stage outputs (GeoJSON, CSV, JSON, Newick).
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional

import geopandas as gpd
import numpy as np
import pandas as pd
import shapely
from pydantic import BaseModel

from .errors import DataError, MissingArtifactError
from .ingest import BuildingSet, StreetNetwork
from .spatial_graph import ContiguityGraph, symmetric_adjacency
from .tessellation import BlockSet, CellSet

# artifact -> stage that writes it
PRODUCERS: Dict[str, str] = {
    "buildings.geojson": "tessellate",
    "streets.geojson": "tessellate",
    "ingest_report.json": "tessellate",
    "cells.geojson": "tessellate",
    "blocks.geojson": "tessellate",
    "cell_blocks.csv": "tessellate",
    "tessellation_meta.json": "tessellate",
    "contiguity.csv": "graph",
    "links.csv": "graph",
    "primary.csv": "characters",
    "primary_meta.json": "characters",
    "context.csv": "context",
    "bins.json": "context",
    "context_meta.json": "context",
    "model.json": "cluster",
    "bic.csv": "cluster",
    "labels.csv": "cluster",
    "responsibilities.csv": "cluster",
    "cells_labeled.geojson": "cluster",
    "taxonomy.json": "taxonomy",
    "taxonomy.nwk": "taxonomy",
    "branches.csv": "taxonomy",
    "profiles.csv": "taxonomy",
    "pooled_taxonomy.json": "taxonomy",
    "pooled_taxonomy.nwk": "taxonomy",
    "validation_report.json": "validate",
}


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class ArtifactStore:
    """One run directory; every reader names the stage that must run first."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def require(self, name: str) -> Path:
        path = self.path(name)
        if not path.exists():
            raise MissingArtifactError(name, PRODUCERS.get(name, "pipeline"), detail=str(path))
        return path

    def _prepare(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        return self.path(name)

    # ============== JSON / TEXT ==============

    def write_json(self, name: str, data: Any) -> Path:
        path = self._prepare(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
            f.write("\n")
        return path

    def read_json(self, name: str) -> Any:
        with open(self.require(name), "r", encoding="utf-8") as f:
            return json.load(f)

    def write_text(self, name: str, text: str) -> Path:
        path = self._prepare(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text if text.endswith("\n") else text + "\n")
        return path

    def read_text(self, name: str) -> str:
        return self.require(name).read_text(encoding="utf-8")

    # ============== CSV ==============

    def write_csv(self, name: str, frame: pd.DataFrame, index: bool = True) -> Path:
        path = self._prepare(name)
        frame.to_csv(path, index=index, lineterminator="\n")
        return path

    def read_csv(self, name: str, index_col: Optional[str] = "building_id") -> pd.DataFrame:
        frame = pd.read_csv(
            self.require(name),
            float_precision="round_trip",
            dtype={index_col: str} if index_col else None,
        )
        if index_col:
            frame = frame.set_index(index_col)
        return frame

    # ============== GEOJSON ==============

    def write_geojson(self, name: str, frame: gpd.GeoDataFrame) -> Path:
        data = json.loads(frame.to_json(drop_id=True, na="null"))
        return self.write_json(name, data)

    def read_geojson(self, name: str) -> gpd.GeoDataFrame:
        data = self.read_json(name)
        features = data.get("features") or []
        frame = gpd.GeoDataFrame.from_features(features)
        if not len(features):
            return frame
        columns = [c for c in frame.columns if c != "geometry"] + ["geometry"]
        return frame[columns]

    # ============== DOMAIN OBJECTS ==============

    def write_buildings(self, buildings: BuildingSet) -> Path:
        self.write_json("ingest_report.json", buildings.report)
        return self.write_geojson("buildings.geojson", buildings.frame)

    def read_buildings(self) -> BuildingSet:
        frame = self.read_geojson("buildings.geojson")
        frame["building_id"] = frame["building_id"].astype(str)
        frame["height"] = pd.to_numeric(frame["height"], errors="coerce")
        return BuildingSet(frame=frame)

    def write_streets(self, streets: StreetNetwork) -> Path:
        return self.write_geojson("streets.geojson", streets.segments)

    def read_streets(self) -> StreetNetwork:
        segments = self.read_geojson("streets.geojson")
        if not len(segments):
            return StreetNetwork.empty()
        for column in ("segment_id", "node_start", "node_end"):
            segments[column] = segments[column].astype(int)
        geoms = np.asarray(segments.geometry.values, dtype=object)
        ends = np.concatenate([segments["node_start"].to_numpy(), segments["node_end"].to_numpy()])
        points = np.concatenate([shapely.get_point(geoms, 0), shapely.get_point(geoms, -1)])
        _, first = np.unique(ends, return_index=True)
        nodes = gpd.GeoDataFrame({"node_id": ends[first]}, geometry=list(points[first]))
        return StreetNetwork(segments=segments, nodes=nodes.sort_values("node_id").reset_index(drop=True))

    def write_cells(self, cells: CellSet) -> Path:
        return self.write_geojson("cells.geojson", cells.frame)

    def read_cells(self, limit: float = 100.0) -> CellSet:
        frame = self.read_geojson("cells.geojson")
        frame["building_id"] = frame["building_id"].astype(str)
        return CellSet(frame=frame, limit=limit)

    def write_blocks(self, blocks: BlockSet, cells: CellSet) -> None:
        self.write_geojson("blocks.geojson", blocks.frame)
        self.write_csv("cell_blocks.csv", pd.DataFrame({"building_id": cells.ids, "block_id": blocks.assignment}), index=False)

    def read_blocks(self) -> BlockSet:
        frame = self.read_geojson("blocks.geojson")
        frame["block_id"] = frame["block_id"].astype(int)
        assignment = self.read_csv("cell_blocks.csv")["block_id"].to_numpy(dtype=int)
        return BlockSet(frame=frame, assignment=assignment)

    def read_contiguity(self, cells: CellSet, kind: str = "queen") -> ContiguityGraph:
        edges = pd.read_csv(self.require("contiguity.csv"), dtype={"source": str, "target": str})
        index = {cell_id: i for i, cell_id in enumerate(cells.ids)}
        try:
            rows = np.array([index[s] for s in edges["source"]], dtype=int)
            cols = np.array([index[t] for t in edges["target"]], dtype=int)
        except KeyError as e:
            raise DataError(f"contiguity.csv references unknown cell {e}") from e
        return ContiguityGraph(ids=cells.ids, adjacency=symmetric_adjacency(rows, cols, len(cells)), kind=kind)
