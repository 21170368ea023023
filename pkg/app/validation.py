"""
Validation
Cross-tabulation of cluster labels against categorical reference layers with
chi-squared, p-value and Cramér's V.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import gammaincc
from sklearn.metrics import adjusted_rand_score

from .errors import DataError
from .models import ChiSquaredResult, ValidationReport
from .spatial_graph import ContiguityGraph, ball_members, k_order_balls

logger = logging.getLogger(__name__)

OTHER = "Other"


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (r, c) integers
    row_labels: List[str]
    column_labels: List[str]
    dropped_cells: int = 0
    folded_categories: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.counts, index=pd.Index(self.row_labels, name="cluster"), columns=self.column_labels)


def cross_tabulate(
    labels: Union[Mapping[str, int], pd.Series],
    categories: Union[Mapping[str, str], pd.Series],
    min_share: float = 0.01,
) -> ContingencyTable:
    """
    Count cells per (cluster, category).

    Cells without a category are dropped and counted; categories holding less
    than `min_share` of the remaining cells are folded into "Other" (last column).

    Args:
        labels: cell id -> cluster label
        categories: cell id -> category
        min_share: Minimum share of a category kept on its own

    Raises:
        DataError: no cell has both a label and a category
    """
    labels = pd.Series(labels, dtype=object)
    categories = pd.Series(categories, dtype=object).dropna()
    common = labels.index.intersection(categories.index)
    if len(common) == 0:
        raise DataError("No cell has both a cluster label and a category")
    dropped = int(len(labels) - len(common))
    if dropped:
        logger.info("%d labelled cells have no category", dropped)

    cats = categories.loc[common].astype(str)
    shares = cats.value_counts(normalize=True)
    small = sorted(shares.index[shares < min_share])
    if small:
        cats = cats.where(~cats.isin(small), OTHER)
        logger.info("Folded %d small categories into %s", len(small), OTHER)

    table = pd.crosstab(labels.loc[common].astype(int), cats)
    columns = sorted(c for c in table.columns if c != OTHER)
    if OTHER in table.columns:
        columns.append(OTHER)
    table = table.reindex(columns=columns).sort_index()
    return ContingencyTable(
        counts=table.to_numpy(dtype=np.int64),
        row_labels=[str(r) for r in table.index],
        column_labels=[str(c) for c in columns],
        dropped_cells=dropped,
        folded_categories=small,
    )


def _as_counts(table: Union[ContingencyTable, np.ndarray, Sequence]) -> np.ndarray:
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or np.any(counts < 0):
        raise DataError("Contingency table must be a 2-D array of non-negative counts")
    return counts


def chi_squared(table: Union[ContingencyTable, np.ndarray], yates: bool = False) -> ChiSquaredResult:
    """
    Pearson chi-squared test of independence.

    p is the upper tail Q(dof/2, chi2/2). A single row or column gives (0, 0, 1).
    `yates` applies the continuity correction to 2x2 tables.
    """
    counts = _as_counts(table)
    total = counts.sum()
    if total <= 0:
        raise DataError("Contingency table is empty")
    r, c = counts.shape
    if r < 2 or c < 2:
        return ChiSquaredResult(statistic=0.0, dof=0, p_value=1.0)
    expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / total
    mask = expected > 0
    diff = np.abs(counts - expected)
    if yates and r == 2 and c == 2:
        diff = np.maximum(diff - 0.5, 0.0)
    statistic = float(np.sum(diff[mask] ** 2 / expected[mask]))
    dof = (r - 1) * (c - 1)
    p_value = float(gammaincc(dof / 2.0, statistic / 2.0))
    return ChiSquaredResult(statistic=statistic, dof=dof, p_value=min(1.0, max(0.0, p_value)))


def cramers_v(table: Union[ContingencyTable, np.ndarray], bias_corrected: bool = False, yates: bool = False) -> float:
    """
    Cramér's V = sqrt(chi2 / (N min(r-1, c-1))); 0 for degenerate tables.

    `bias_corrected` uses the small-sample correction of phi² and the table dimensions.
    """
    counts = _as_counts(table)
    n = counts.sum()
    r, c = counts.shape
    if n <= 0 or min(r, c) < 2:
        return 0.0
    chi2 = chi_squared(counts, yates=yates).statistic
    if not bias_corrected:
        value = np.sqrt(chi2 / (n * min(r - 1, c - 1)))
    else:
        if n <= 1:
            return 0.0
        phi2 = max(0.0, chi2 / n - (r - 1) * (c - 1) / (n - 1))
        r_corr = r - (r - 1) ** 2 / (n - 1)
        c_corr = c - (c - 1) ** 2 / (n - 1)
        denominator = min(r_corr - 1, c_corr - 1)
        if denominator <= 0:
            return 0.0
        value = np.sqrt(phi2 / denominator)
    return float(min(1.0, max(0.0, value)))


def prevailing_category(categories: Sequence[Optional[str]], graph: ContiguityGraph, k: int = 3) -> List[Optional[str]]:
    """
    Most frequent category within each cell's k-order ball (ties to the
    lexicographically smallest); None when the ball has no categorised cell.
    """
    values = list(categories)
    if len(values) != len(graph):
        raise DataError("One category per cell is required")
    balls = k_order_balls(graph, k)
    out: List[Optional[str]] = []
    for i in range(len(values)):
        counts: Dict[str, int] = {}
        for j in ball_members(balls, i):
            value = values[j]
            if value is None or (isinstance(value, float) and np.isnan(value)):
                continue
            counts[str(value)] = counts.get(str(value), 0) + 1
        out.append(min(counts, key=lambda cat: (-counts[cat], cat)) if counts else None)
    return out


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    """Agreement of two partitions, 1 for identical ones (up to relabelling)."""
    return float(adjusted_rand_score(np.asarray(a), np.asarray(b)))


def validate_layer(
    name: str,
    labels: pd.Series,
    categories: pd.Series,
    min_share: float = 0.01,
    yates: bool = False,
    bias_corrected: bool = False,
) -> Tuple[ValidationReport, ContingencyTable]:
    """Cross-tabulate one layer and compute all statistics."""
    table = cross_tabulate(labels, categories, min_share)
    chi = chi_squared(table, yates=yates)
    report = ValidationReport(
        layer=name,
        n=table.n,
        row_labels=table.row_labels,
        column_labels=table.column_labels,
        counts=table.counts.tolist(),
        chi_squared=chi,
        cramers_v=cramers_v(table, bias_corrected=bias_corrected, yates=yates),
        bias_corrected=bias_corrected,
        yates=yates,
        dropped_cells=table.dropped_cells,
        folded_categories=table.folded_categories,
    )
    logger.info("Validation %s: chi2=%.4f dof=%d p=%.4g V=%.4f", name, chi.statistic, chi.dof, chi.p_value, report.cramers_v)
    return report, table
