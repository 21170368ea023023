"""
Contextual Characters
Interquartile mean, interquartile range, interdecile Theil index and Simpson's
diversity of every primary character over each cell's k-order neighbourhood.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy import sparse

from .characters import CharacterMatrix, impute_missing, round_significant
from .errors import DataError
from .models import MissingReport
from .parallel import chunked, parallel_map, resolve_threads
from .spatial_graph import ContiguityGraph, ball_members, k_order_balls, k_order_neighbourhood
from .tessellation import BlockSet

logger = logging.getLogger(__name__)

STATISTICS = ("IQM", "IQR", "IDT", "SDI")
QUANTILE_METHOD = "linear"
SHIFT_EPSILON = 1e-9


# ============== GLOBAL BINS ==============

@dataclass
class GlobalBins:
    """Per-column bin edges over the whole study area."""

    edges: Dict[str, np.ndarray]
    n_bins: int = 10

    def richness(self, column: str) -> int:
        return len(self.edges[column]) - 1

    def to_dict(self) -> Dict:
        return {
            "n_bins": self.n_bins,
            "quantile_method": QUANTILE_METHOD,
            "edges": {name: [float(e) for e in edges] for name, edges in self.edges.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GlobalBins":
        return cls(edges={k: np.asarray(v, dtype=float) for k, v in data["edges"].items()}, n_bins=int(data["n_bins"]))


def bin_edges(values: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Equal-count edges, deduplicated; constant or empty input gets one unit-width bin."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        return np.array([0.0, 1.0])
    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1), method=QUANTILE_METHOD))
    if len(edges) < 2:
        return np.array([edges[0], edges[0] + 1.0])
    return edges


def global_bins(frame: pd.DataFrame, n_bins: int = 10) -> GlobalBins:
    return GlobalBins(edges={name: bin_edges(frame[name].to_numpy(dtype=float), n_bins) for name in frame.columns}, n_bins=n_bins)


# ============== STATISTICS ==============

def _prepare(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.sort(v[np.isfinite(v)])


def interquartile_mean(values) -> float:
    """Mean of the values between the first and third quartile (plain mean if none are)."""
    v = _prepare(values)
    if len(v) == 0:
        return float("nan")
    q1, q3 = np.quantile(v, [0.25, 0.75], method=QUANTILE_METHOD)
    inside = v[(v >= q1) & (v <= q3)]
    return float(inside.mean() if len(inside) else v.mean())


def interquartile_range(values) -> float:
    v = _prepare(values)
    if len(v) == 0:
        return float("nan")
    q1, q3 = np.quantile(v, [0.25, 0.75], method=QUANTILE_METHOD)
    return float(max(0.0, q3 - q1))


def theil(values) -> float:
    """Theil index sum((x/S) * ln(N x/S)); 0 when the sum is 0 or all values are equal."""
    v = _prepare(values)
    if len(v) == 0:
        return float("nan")
    total = v.sum()
    if total == 0 or v[0] == v[-1]:
        return 0.0
    shares = v / total
    positive = shares > 0
    index = np.sum(shares[positive] * np.log(len(v) * shares[positive]))
    return float(max(0.0, index))


def interdecile_theil(values) -> float:
    """
    Theil index of the values clipped to their first and ninth deciles.

    Nonpositive values after clipping are shifted by |min| + 1e-9 * range.
    """
    v = _prepare(values)
    if len(v) == 0:
        return float("nan")
    d1, d9 = np.quantile(v, [0.1, 0.9], method=QUANTILE_METHOD)
    x = np.clip(v, d1, d9)
    low = x.min()
    if low <= 0:
        shift = abs(low) + SHIFT_EPSILON * (x.max() - low)
        x = x + shift
        logger.debug("Shifted nonpositive values by %.3g before Theil", shift)
    return theil(x)


def simpson_diversity(values, edges: np.ndarray) -> float:
    """Simpson's index sum n(n-1) / (N(N-1)) over global bins; 1 for a single value."""
    v = _prepare(values)
    n = len(v)
    if n == 0:
        return float("nan")
    if n == 1:
        return 1.0
    edges = np.asarray(edges, dtype=float)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)
    counts = np.bincount(idx).astype(float)
    return float(np.sum(counts * (counts - 1)) / (n * (n - 1)))


# ============== NEIGHBOURHOODS ==============

def gather_context(
    cell: Union[int, str],
    values,
    graph: ContiguityGraph,
    k: int = 3,
    balls: Optional[sparse.csr_matrix] = None,
) -> np.ndarray:
    """
    Values of every cell in ball(k) around `cell` (itself included), missing ones dropped.

    An empty result means the whole context is missing.
    """
    i = graph.index_of(cell)
    if balls is None:
        members = k_order_neighbourhood(graph, i, k)
    else:
        members = ball_members(balls, i)
    v = np.asarray(values, dtype=float)[members]
    return np.sort(v[np.isfinite(v)])


@dataclass
class ContextMatrix:
    """Contextual characters; all values finite after imputation."""

    frame: pd.DataFrame
    bins: GlobalBins
    k: int = 3
    raw: Optional[pd.DataFrame] = None  # before imputation
    missing: MissingReport = field(default_factory=MissingReport)
    constant_primaries: List[str] = field(default_factory=list)

    @property
    def columns(self) -> List[str]:
        return list(self.frame.columns)

    def metadata(self) -> Dict:
        return {
            "k": self.k,
            "statistics": list(STATISTICS),
            "quantile_method": QUANTILE_METHOD,
            "columns": self.columns,
            "constant_primaries": self.constant_primaries,
            "missing": self.missing.model_dump(),
        }


def context_column_names(primaries: List[str]) -> List[str]:
    return [f"{name}_{stat}" for name in primaries for stat in STATISTICS]


def _context_rows(cells: range, values: np.ndarray, balls: sparse.csr_matrix, edges: List[np.ndarray]) -> np.ndarray:
    n_cols = values.shape[1]
    out = np.empty((len(cells), 4 * n_cols))
    for row, i in enumerate(cells):
        block = values[ball_members(balls, i)]
        for j in range(n_cols):
            v = block[:, j]
            out[row, 4 * j] = interquartile_mean(v)
            out[row, 4 * j + 1] = interquartile_range(v)
            out[row, 4 * j + 2] = interdecile_theil(v)
            out[row, 4 * j + 3] = simpson_diversity(v, edges[j])
    return out


def compute_context_matrix(
    matrix: Union[CharacterMatrix, pd.DataFrame],
    graph: ContiguityGraph,
    bins: Optional[GlobalBins] = None,
    k: int = 3,
    blocks: Optional[BlockSet] = None,
    n_bins: int = 10,
    drop_threshold: float = 0.5,
    threads: Optional[int] = None,
) -> ContextMatrix:
    """
    Four contextual statistics of every primary column for every cell.

    Args:
        matrix: Primary characters (rows in cell order)
        graph: Contiguity graph
        bins: Global bins; computed from the matrix when omitted
        k: Contiguity order of the context
        blocks: Restrict contexts to blocks when given
        n_bins: Bin count when bins are computed here
        drop_threshold: Contextual columns with a larger missing share are dropped
        threads: Worker threads over cell chunks

    Returns:
        ContextMatrix with columns `<primary>_<IQM|IQR|IDT|SDI>`
    """
    frame = matrix.frame if isinstance(matrix, CharacterMatrix) else matrix
    if len(frame) != len(graph):
        raise DataError(f"Matrix has {len(frame)} rows but the graph has {len(graph)} cells")
    primaries = list(frame.columns)
    bins = bins or global_bins(frame, n_bins)
    values = frame.to_numpy(dtype=float)
    edges = [bins.edges[name] for name in primaries]

    constant = [name for name in primaries if np.nanstd(frame[name].to_numpy(dtype=float)) == 0]
    for name in constant:
        logger.warning("Primary character %s has zero variance; its dispersion columns are constant", name)

    balls = k_order_balls(graph, k, blocks)
    workers = resolve_threads(threads)
    parts = parallel_map(
        lambda cells: _context_rows(cells, values, balls, edges),
        chunked(range(len(frame)), workers * 4),
        threads=workers,
    )
    raw = pd.DataFrame(round_significant(np.vstack(parts)), index=frame.index, columns=context_column_names(primaries))
    imputed, missing = impute_missing(raw, drop_threshold)
    logger.info("Context matrix: %d cells x %d columns (k=%d)", len(imputed), imputed.shape[1], k)
    return ContextMatrix(frame=imputed, bins=bins, k=k, raw=raw, missing=missing, constant_primaries=constant)
