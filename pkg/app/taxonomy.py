"""
Taxonomy
Ward dendrogram over urban form type centroids, cophenetic distances, cuts,
Newick export and multi-city pooled taxonomies.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import ClusterNode, cophenet, to_tree
from scipy.spatial.distance import pdist, squareform

from .clustering import standardize
from .errors import DataError, format_ids
from .models import MergeStep

logger = logging.getLogger(__name__)

HEIGHT_CONVENTION = "euclidean-ward: height = sqrt(2 * increase in within-cluster sum of squares)"


@dataclass
class Taxonomy:
    """Leaves (urban form types) and the Ward merge list in n + step id convention."""

    leaves: List[str]
    centroids: np.ndarray
    merges: List[MergeStep]
    tags: List[str] = field(default_factory=list)
    columns: List[str] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def linkage(self) -> np.ndarray:
        """scipy-compatible (n-1) x 4 linkage matrix."""
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float).reshape(-1, 4)

    def to_dict(self) -> Dict:
        return {
            "leaves": self.leaves,
            "tags": self.tags,
            "columns": self.columns,
            "centroids": self.centroids.tolist(),
            "merges": [m.model_dump() for m in self.merges],
            "height_convention": HEIGHT_CONVENTION,
            "cophenetic_correlation": cophenetic_correlation(self),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Taxonomy":
        return cls(
            leaves=list(data["leaves"]),
            centroids=np.asarray(data["centroids"], dtype=float),
            merges=[MergeStep(**m) for m in data["merges"]],
            tags=list(data.get("tags", [])),
            columns=list(data.get("columns", [])),
        )


def cluster_centroids(x: np.ndarray, labels: Sequence[int]) -> pd.DataFrame:
    """
    Per-label column means.

    Args:
        x: (n, d) standardised features
        labels: Per-row label

    Returns:
        DataFrame indexed by label (ascending); labels without rows do not appear
    """
    labels = np.asarray(labels, dtype=int)
    x = np.asarray(x, dtype=float)
    if len(labels) != len(x):
        raise DataError("One label per row is required")
    present = np.unique(labels)
    expected = np.arange(present.max() + 1) if len(present) else present
    missing = np.setdiff1d(expected, present)
    if len(missing):
        logger.warning("Dropping empty clusters: %s", format_ids(missing.tolist()))
    centroids = np.vstack([x[labels == label].mean(axis=0) for label in present]) if len(present) else np.empty((0, x.shape[1]))
    return pd.DataFrame(centroids, index=pd.Index(present, name="label"))


def ward_linkage(
    centroids: np.ndarray,
    leaves: Optional[List[str]] = None,
    tags: Optional[List[str]] = None,
    columns: Optional[List[str]] = None,
) -> Taxonomy:
    """
    Agglomerative Ward clustering of centroids (Lance-Williams update on Euclidean distances).

    Ties merge the pair with the lexicographically smallest (lower id, higher id).
    New clusters get id n + step.

    Raises:
        DataError: fewer than two centroids
    """
    points = np.asarray(centroids, dtype=float)
    n = len(points)
    if n < 2:
        raise DataError(f"Ward linkage needs at least 2 centroids, got {n}")
    leaves = leaves if leaves is not None else [str(i) for i in range(n)]

    dist: Dict[Tuple[int, int], float] = {}
    full = squareform(pdist(points))
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = full[i, j]
    size = {i: 1 for i in range(n)}
    merges: List[MergeStep] = []

    for step in range(n - 1):
        (a, b), height = min(dist.items(), key=lambda item: (item[1], item[0]))
        new = n + step
        na, nb = size.pop(a), size.pop(b)
        merges.append(MergeStep(left=a, right=b, height=float(height), size=na + nb))
        del dist[(a, b)]
        for c in list(size):
            nc = size[c]
            d_ac = dist.pop((min(a, c), max(a, c)))
            d_bc = dist.pop((min(b, c), max(b, c)))
            value = ((na + nc) * d_ac ** 2 + (nb + nc) * d_bc ** 2 - nc * height ** 2) / (na + nb + nc)
            dist[(c, new)] = float(np.sqrt(max(value, 0.0)))
        size[new] = na + nb

    logger.info("Ward linkage over %d leaves", n)
    return Taxonomy(leaves=list(leaves), centroids=points, merges=merges, tags=list(tags or []), columns=list(columns or []))


def cophenetic_matrix(taxonomy: Taxonomy) -> np.ndarray:
    """Height of the lowest merge joining each pair of leaves."""
    return squareform(cophenet(taxonomy.linkage()))


def cophenetic_correlation(taxonomy: Taxonomy) -> Optional[float]:
    """Correlation between cophenetic and centroid distances (None below 3 leaves)."""
    if taxonomy.n_leaves < 3:
        return None
    distances = pdist(taxonomy.centroids)
    if np.ptp(distances) == 0:
        return None
    value, _ = cophenet(taxonomy.linkage(), distances)
    return float(value)


def cut(taxonomy: Taxonomy, n_branches: int) -> np.ndarray:
    """
    Leaf -> branch map with exactly n_branches groups.

    Branches are numbered by their smallest leaf.
    """
    n = taxonomy.n_leaves
    if not 1 <= n_branches <= n:
        raise DataError(f"n_branches must be in [1, {n}], got {n_branches}")
    members: Dict[int, List[int]] = {i: [i] for i in range(n)}
    for step, merge in enumerate(taxonomy.merges[: n - n_branches]):
        members[n + step] = members.pop(merge.left) + members.pop(merge.right)
    groups = sorted((sorted(leaves) for leaves in members.values()), key=lambda g: g[0])
    branch = np.empty(n, dtype=int)
    for b, group in enumerate(groups):
        branch[group] = b
    return branch


def branch_colours(taxonomy: Taxonomy, n_branches: int) -> pd.DataFrame:
    """Branch of every leaf plus its shade index within the branch (dendrogram order)."""
    branch = cut(taxonomy, n_branches)
    order = to_tree(taxonomy.linkage()).pre_order()
    shade = np.empty(taxonomy.n_leaves, dtype=int)
    seen: Dict[int, int] = {}
    for leaf in order:
        shade[leaf] = seen.get(branch[leaf], 0)
        seen[branch[leaf]] = shade[leaf] + 1
    return pd.DataFrame({"leaf": taxonomy.leaves, "branch": branch, "shade": shade})


def _newick_label(label: str) -> str:
    if any(ch in label for ch in " ():;,[]'"):
        return "'" + label.replace("'", "''") + "'"
    return label


def to_newick(taxonomy: Taxonomy) -> str:
    """Newick string with branch lengths (parent height minus child height)."""

    def render(node: ClusterNode, parent_height: float) -> str:
        length = parent_height - node.dist
        if node.is_leaf():
            text = _newick_label(taxonomy.leaves[node.id])
        else:
            text = f"({render(node.left, node.dist)},{render(node.right, node.dist)})"
        return f"{text}:{length:.12g}"

    root = to_tree(taxonomy.linkage())
    return f"({render(root.left, root.dist)},{render(root.right, root.dist)});"


# ============== PROFILES & POOLING ==============

def cluster_profiles(matrix: pd.DataFrame, labels: Sequence[int]) -> pd.DataFrame:
    """Mean and median of every character per label, in original units (long format)."""
    frame = matrix.reset_index(drop=True).copy()
    frame["label"] = np.asarray(labels, dtype=int)
    grouped = frame.groupby("label", sort=True)
    means = grouped.mean().stack().rename("mean")
    medians = grouped.median().stack().rename("median")
    profile = pd.concat([means, medians], axis=1).reset_index()
    profile.columns = ["label", "character", "mean", "median"]
    return profile


@dataclass
class CityPool:
    """One city's contextual matrix (original units) and labels."""

    tag: str
    matrix: pd.DataFrame
    labels: np.ndarray


def _check_schema(pools: List[CityPool]) -> List[str]:
    reference = list(pools[0].matrix.columns)
    for pool in pools[1:]:
        columns = list(pool.matrix.columns)
        if columns != reference:
            differing = sorted(set(reference) ^ set(columns)) or ["(column order differs)"]
            raise DataError(
                f"Schema mismatch between '{pools[0].tag}' and '{pool.tag}': {format_ids(differing)}"
            )
    return reference


def combine_pools(pools: List[CityPool], standardization: str = "pooled") -> Taxonomy:
    """
    Single Ward taxonomy over the types of several cities.

    Args:
        pools: Per-city matrices sharing one column schema
        standardization: "pooled" (joint mean/std) or "per_city"

    Returns:
        Taxonomy whose leaves are `<tag>:<label>`, tagged by city
    """
    if not pools:
        raise DataError("No cities to pool")
    tags = [p.tag for p in pools]
    if len(set(tags)) != len(tags):
        raise DataError(f"Duplicate city tags: {format_ids(sorted({t for t in tags if tags.count(t) > 1}))}")
    columns = _check_schema(pools)

    if standardization == "pooled":
        z, _ = standardize(pd.concat([p.matrix for p in pools], ignore_index=True))
        bounds = np.cumsum([0] + [len(p.matrix) for p in pools])
        scaled = [z[bounds[i]:bounds[i + 1]] for i in range(len(pools))]
    elif standardization == "per_city":
        scaled = [standardize(p.matrix)[0] for p in pools]
    else:
        raise DataError(f"Unknown standardization: {standardization}")

    leaves: List[str] = []
    leaf_tags: List[str] = []
    centroid_rows = []
    for pool, x in zip(pools, scaled):
        centroids = cluster_centroids(x, pool.labels)
        for label, row in centroids.iterrows():
            leaves.append(f"{pool.tag}:{label}")
            leaf_tags.append(pool.tag)
            centroid_rows.append(row.to_numpy())
    logger.info("Pooled %d types from %d cities (%s standardization)", len(leaves), len(pools), standardization)
    return ward_linkage(np.vstack(centroid_rows), leaves=leaves, tags=leaf_tags, columns=columns)
