#!/usr/bin/env python3
"""
Synthetic City Data Generator
Writes planted two-tissue cities and random footprint layouts as GeoJSON inputs.

Usage:
    python data_generator.py planted --output data/planted --seed 0
    python data_generator.py rectangles --output data/random --count 1000
"""

import argparse
import os
import sys
from pathlib import Path

current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

import geopandas as gpd

from app.artifacts import ArtifactStore
from app.synthetic import generate_planted_city, random_rectangles, write_city


def main():
    parser = argparse.ArgumentParser(description="Generate synthetic city inputs")
    parser.add_argument("kind", choices=["planted", "rectangles"])
    parser.add_argument("--output", type=Path, required=True, help="Directory for the generated files")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--count", type=int, default=1000, help="Number of rectangles")
    args = parser.parse_args()

    if args.kind == "planted":
        city = generate_planted_city(seed=args.seed)
        for path in write_city(city, args.output):
            print(f"wrote {path}")
        print(f"{len(city.buildings)} buildings, {len(city.street_lines)} street lines")
        print(f"tessellate with tessellation.limit = {city.limit}")
    else:
        buildings = random_rectangles(args.count, seed=args.seed)
        frame = buildings.frame
        out = gpd.GeoDataFrame({"id": frame["building_id"], "height": frame["height"]}, geometry=list(frame.geometry.values))
        path = ArtifactStore(args.output).write_geojson("buildings.geojson", out)
        print(f"wrote {path} ({len(buildings)} buildings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
