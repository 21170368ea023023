"""
Urban Form Taxonomy Pipeline
Stage orchestration: every stage reads the previous stages' artifacts from the
run directory, so any stage can be re-run on its own.
"""

import logging
import math
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .artifacts import ArtifactStore
from .characters import compute_primary_characters, resolve_registry
from .clustering import (
    GmmModel,
    assign_labels,
    bic_curve_frame,
    drop_constant,
    pca_whiten,
    select_k,
    standardize,
)
from .config import PipelineConfig
from .context import STATISTICS, compute_context_matrix
from .errors import ConfigError, DataError
from .ingest import StreetNetwork, load_buildings, load_streets
from .models import StageRecord
from .spatial_graph import (
    adjacency_edge_list,
    build_contiguity,
    build_street_graph,
    links_frame,
    morans_i,
    network_from_links,
)
from .taxonomy import (
    CityPool,
    branch_colours,
    cluster_centroids,
    cluster_profiles,
    combine_pools,
    to_newick,
    ward_linkage,
)
from .tessellation import assign_cells_to_blocks, generate_enclosures, morphological_tessellation
from .validation import prevailing_category, validate_layer

logger = logging.getLogger(__name__)

STAGE_ORDER = ("tessellate", "graph", "characters", "context", "cluster", "taxonomy", "validate")

StageResult = Tuple[List[str], List[str]]  # (artifacts written, notes)


def _finite_or_none(value: float) -> Optional[float]:
    return None if value is None or not math.isfinite(value) else float(value)


class PipelineRunner:
    """Runs pipeline stages against one output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.config = cfg
        self.store = ArtifactStore(cfg.output_dir)
        self.threads = cfg.threads or None
        self.stage_history: List[StageRecord] = []
        self.stages: Dict[str, Callable[[], StageResult]] = {
            "tessellate": self._tessellate_stage,
            "graph": self._graph_stage,
            "characters": self._characters_stage,
            "context": self._context_stage,
            "cluster": self._cluster_stage,
            "taxonomy": self._taxonomy_stage,
            "validate": self._validate_stage,
        }

    def run_stage(self, name: str) -> StageRecord:
        """Execute one stage and record it in the history."""
        if name not in self.stages:
            raise ConfigError(f"Unknown stage: {name} (expected one of {', '.join(STAGE_ORDER)})")
        started = datetime.now()
        logger.info("Stage %s started", name, extra={"stage": name})
        self.store.write_json("run_config.json", self.config.resolved())
        artifacts, notes = self.stages[name]()
        record = StageRecord(stage=name, started_at=started, finished_at=datetime.now(), artifacts=artifacts, notes=notes)
        self.stage_history.append(record)
        logger.info("Stage %s finished: %d artifacts", name, len(artifacts), extra={"stage": name})
        return record

    def run_all(self, stages: Sequence[str] = STAGE_ORDER) -> List[StageRecord]:
        return [self.run_stage(name) for name in stages]

    def get_stage_history(self) -> List[StageRecord]:
        """Return history of executed stages."""
        return self.stage_history.copy()

    def _meta(self, **values) -> Dict:
        return {**values, "config": self.config.resolved()}

    # ============== TESSELLATE ==============

    def _tessellate_stage(self) -> StageResult:
        cfg = self.config
        if cfg.input.buildings is None:
            raise ConfigError("input.buildings is not set")

        # Step 1: Load inputs
        buildings = load_buildings(cfg.input.buildings, cfg.input)
        if cfg.input.streets is not None:
            streets = load_streets(cfg.input.streets, cfg.input.snap_tolerance)
        else:
            logger.warning("No street network configured; street characters will be missing")
            streets = StreetNetwork.empty()

        # Step 2: Tessellate
        t = cfg.tessellation
        cells = morphological_tessellation(
            buildings, limit=t.limit, densify=t.densify, erosion=t.erosion,
            separation=t.separation, sliver_area=t.sliver_area,
        )

        # Step 3: Enclosures and cell -> block map
        blocks = generate_enclosures(streets, cells.extent())
        assign_cells_to_blocks(cells, blocks)

        # Step 4: Persist
        self.store.write_buildings(buildings)
        self.store.write_streets(streets)
        self.store.write_cells(cells)
        self.store.write_blocks(blocks, cells)
        self.store.write_json("tessellation_meta.json", self._meta(
            n_buildings=len(buildings),
            n_cells=len(cells),
            n_blocks=len(blocks.frame),
            n_segments=len(streets),
            cell_area_total=float(cells.areas.sum()),
        ))
        return [
            "buildings.geojson", "ingest_report.json", "streets.geojson", "cells.geojson",
            "blocks.geojson", "cell_blocks.csv", "tessellation_meta.json",
        ], []

    # ============== GRAPH ==============

    def _graph_stage(self) -> StageResult:
        cfg = self.config
        buildings = self.store.read_buildings()
        cells = self.store.read_cells(cfg.tessellation.limit)
        streets = self.store.read_streets()

        contiguity = build_contiguity(cells, cfg.graph.tolerance, cfg.graph.contiguity)
        network = build_street_graph(streets, cells, buildings)

        self.store.write_csv("contiguity.csv", adjacency_edge_list(contiguity), index=False)
        self.store.write_csv("links.csv", links_frame(cells, network), index=False)
        notes = [] if not network.is_empty else ["empty street network: all links unset"]
        return ["contiguity.csv", "links.csv"], notes

    # ============== CHARACTERS ==============

    def _characters_stage(self) -> StageResult:
        cfg = self.config
        buildings = self.store.read_buildings()
        cells = self.store.read_cells(cfg.tessellation.limit)
        streets = self.store.read_streets()
        contiguity = self.store.read_contiguity(cells, cfg.graph.contiguity)
        network = network_from_links(streets, self.store.read_csv("links.csv", index_col=None))
        blocks = self.store.read_blocks() if cfg.graph.constrained else None

        registry = resolve_registry(cfg.characters.registry)
        matrix = compute_primary_characters(
            buildings, cells, contiguity, network,
            blocks=blocks,
            registry=registry,
            floor_height=cfg.characters.floor_height,
            large_scale_k=cfg.characters.large_scale_k,
            constrained=cfg.graph.constrained,
            threads=self.threads,
        )

        self.store.write_csv("primary.csv", matrix.frame)
        self.store.write_json("primary_meta.json", self._meta(
            registry=[d.model_dump() for d in matrix.descriptors],
            missing=matrix.missing.model_dump(),
            n_cells=len(matrix.frame),
        ))
        return ["primary.csv", "primary_meta.json"], []

    # ============== CONTEXT ==============

    def _context_stage(self) -> StageResult:
        cfg = self.config
        primary = self.store.read_csv("primary.csv")
        cells = self.store.read_cells(cfg.tessellation.limit)
        contiguity = self.store.read_contiguity(cells, cfg.graph.contiguity)
        blocks = self.store.read_blocks() if cfg.graph.constrained else None
        if list(primary.index) != cells.ids:
            raise DataError("primary.csv rows do not match the cells; re-run the 'characters' stage")

        context = compute_context_matrix(
            primary, contiguity,
            k=cfg.context.k,
            blocks=blocks,
            n_bins=cfg.context.bins,
            drop_threshold=cfg.context.missing_drop_threshold,
            threads=self.threads,
        )
        iqm_columns = [c for c in context.columns if c.endswith(f"_{STATISTICS[0]}")]
        autocorrelation = {c: _finite_or_none(morans_i(context.frame[c].to_numpy(), contiguity)) for c in iqm_columns}

        self.store.write_csv("context.csv", context.frame)
        self.store.write_json("bins.json", context.bins.to_dict())
        self.store.write_json("context_meta.json", self._meta(**context.metadata(), morans_i=autocorrelation))
        return ["context.csv", "bins.json", "context_meta.json"], []

    # ============== CLUSTER ==============

    def _cluster_stage(self) -> StageResult:
        cfg = self.config.clustering
        context = self.store.read_csv("context.csv")
        if context.shape[1] == 0:
            raise DataError("context.csv has no columns to cluster")

        # Step 1: Standardise, drop zero-variance columns, apply the dimensionality guard
        z, standardization = standardize(context)
        dropped = standardization.constant_columns
        x, pca = drop_constant(z, standardization), None
        if dropped:
            logger.info("Clustering on %d of %d columns; constant: %s", x.shape[1], z.shape[1], ", ".join(dropped))
        if cfg.pca_guard and x.shape[1] > len(x) / 10 and not standardization.constant.all():
            x, pca = pca_whiten(x, cfg.pca_variance)

        # Step 2: Choose K (forced or elbow of the BIC curve)
        fit_args = dict(
            seeds_per_k=cfg.seeds_per_k, seed=cfg.seed, covariance=cfg.covariance,
            max_iter=cfg.max_iter, tol=cfg.tol, reg_scale=cfg.reg_scale, threads=self.threads,
        )
        if cfg.k is not None:
            selection, models = select_k(x, k_min=cfg.k, k_max=cfg.k, **fit_args)
            selection.method = "forced"
        else:
            selection, models = select_k(x, k_min=cfg.k_min, k_max=cfg.k_max, **fit_args)
        model = models[selection.k]
        model.standardization = standardization
        model.pca = pca

        # Step 3: Label cells
        labeling = assign_labels(model, x)
        labels = pd.DataFrame({"label": labeling.labels}, index=context.index)

        artifacts = ["model.json", "bic.csv", "labels.csv", "cells_labeled.geojson"]
        self.store.write_json(
            "model.json",
            {**model.to_dict(), "dropped_constant_columns": dropped, "selection": selection.model_dump()},
        )
        self.store.write_csv("bic.csv", bic_curve_frame(selection), index=False)
        self.store.write_csv("labels.csv", labels)
        if cfg.save_responsibilities:
            resp = pd.DataFrame(
                labeling.responsibilities, index=context.index,
                columns=[f"p{c}" for c in range(model.k)],
            )
            self.store.write_csv("responsibilities.csv", resp)
            artifacts.append("responsibilities.csv")
        self._write_labeled_cells(labels["label"].to_numpy())

        notes = [f"K={selection.k} ({selection.method})"]
        if len(np.unique(labeling.labels)) < model.k:
            notes.append("some components own no cells")
        return artifacts, notes

    def _write_labeled_cells(self, labels: np.ndarray, branches: Optional[np.ndarray] = None) -> None:
        cells = self.store.read_cells(self.config.tessellation.limit)
        frame = cells.frame.copy()
        frame.insert(1, "label", labels.astype(int))
        if branches is not None:
            frame.insert(2, "branch", branches.astype(int))
        self.store.write_geojson("cells_labeled.geojson", frame)

    # ============== TAXONOMY ==============

    def _taxonomy_stage(self) -> StageResult:
        cfg = self.config.taxonomy
        context = self.store.read_csv("context.csv")
        labels = self.store.read_csv("labels.csv")["label"].to_numpy(dtype=int)
        model = GmmModel.from_dict(self.store.read_json("model.json"))
        if model.standardization is None or model.standardization.columns != list(context.columns):
            raise DataError("model.json does not match context.csv; re-run the 'cluster' stage")

        # Step 1: Profiles in original units
        self.store.write_csv("profiles.csv", cluster_profiles(context, labels), index=False)
        artifacts = ["profiles.csv"]

        # Step 2: Type centroids in standardised space
        z, _ = standardize(context)
        centroids = cluster_centroids(z, labels)
        if len(centroids) < 2:
            message = f"taxonomy skipped: needs at least 2 types, found {len(centroids)}"
            logger.warning(message)
            self.store.write_json("taxonomy.json", {"skipped": True, "reason": message, "n_types": len(centroids)})
            return artifacts + ["taxonomy.json"], [message]

        # Step 3: Ward dendrogram and branches
        leaves = [str(label) for label in centroids.index]
        taxonomy = ward_linkage(
            centroids.to_numpy(), leaves=leaves, tags=[cfg.tag] * len(leaves), columns=list(context.columns),
        )
        n_branches = min(cfg.n_branches, taxonomy.n_leaves)
        branches = branch_colours(taxonomy, n_branches)
        self.store.write_json("taxonomy.json", {**taxonomy.to_dict(), "skipped": False, "n_branches": n_branches})
        self.store.write_text("taxonomy.nwk", to_newick(taxonomy))
        self.store.write_csv("branches.csv", branches, index=False)
        branch_of = dict(zip(centroids.index.astype(int), branches["branch"].to_numpy()))
        self._write_labeled_cells(labels, np.array([branch_of[label] for label in labels]))
        artifacts += ["taxonomy.json", "taxonomy.nwk", "branches.csv", "cells_labeled.geojson"]

        # Step 4: Optional multi-city pooling
        if cfg.pools:
            pools = [CityPool(tag=cfg.tag, matrix=context, labels=labels)]
            for pool in cfg.pools:
                other = ArtifactStore(pool.run_dir)
                pools.append(CityPool(
                    tag=pool.tag,
                    matrix=other.read_csv("context.csv"),
                    labels=other.read_csv("labels.csv")["label"].to_numpy(dtype=int),
                ))
            pooled = combine_pools(pools, cfg.standardization)
            self.store.write_json("pooled_taxonomy.json", {**pooled.to_dict(), "standardization": cfg.standardization})
            self.store.write_text("pooled_taxonomy.nwk", to_newick(pooled))
            artifacts += ["pooled_taxonomy.json", "pooled_taxonomy.nwk"]
        return artifacts, []

    # ============== VALIDATE ==============

    def _validate_stage(self) -> StageResult:
        cfg = self.config.validation
        if not cfg.layers:
            message = "validation skipped: no layers configured"
            logger.info(message)
            self.store.write_json("validation_report.json", {"layers": [], "skipped": True})
            return ["validation_report.json"], [message]

        labels = self.store.read_csv("labels.csv")["label"]
        cells = self.store.read_cells(self.config.tessellation.limit)
        contiguity = None
        reports = []
        artifacts = ["validation_report.json"]
        for layer in cfg.layers:
            if not layer.path.exists():
                raise DataError(f"Validation layer '{layer.name}' not found: {layer.path}")
            table = pd.read_csv(layer.path, dtype={layer.id_column: str})
            for column in (layer.id_column, layer.category_column):
                if column not in table.columns:
                    raise DataError(f"Validation layer '{layer.name}' has no column '{column}'")
            categories = table.set_index(layer.id_column)[layer.category_column]
            if not categories.index.is_unique:
                raise DataError(f"Validation layer '{layer.name}' lists a cell more than once")

            if layer.prevailing_k is not None:
                if contiguity is None:
                    contiguity = self.store.read_contiguity(cells, self.config.graph.contiguity)
                aligned = categories.reindex(cells.ids).tolist()
                categories = pd.Series(prevailing_category(aligned, contiguity, layer.prevailing_k), index=cells.ids)

            report, contingency = validate_layer(
                layer.name, labels, categories,
                min_share=cfg.min_share, yates=cfg.yates, bias_corrected=cfg.bias_corrected,
            )
            reports.append(report.model_dump())
            self.store.write_csv(f"contingency_{layer.name}.csv", contingency.to_frame())
            artifacts.append(f"contingency_{layer.name}.csv")

        self.store.write_json("validation_report.json", {"layers": reports, "skipped": False})
        return artifacts, []
