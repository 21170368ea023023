from datetime import datetime
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel


# ============== INGEST MODELS ==============

class SkippedFeature(BaseModel):
    """A feature the loader could not use."""
    index: int
    feature_id: Optional[str] = None
    reason: str


class IngestReport(BaseModel):
    """Counts reported by the building and street loaders."""
    source: str
    kind: str  # "buildings", "streets"
    loaded: int = 0
    repaired: int = 0
    exploded: int = 0
    skipped: int = 0
    generated_ids: int = 0
    missing_heights: int = 0
    skipped_features: List[SkippedFeature] = []


# ============== CHARACTER MODELS ==============

Element = Literal["building", "cell", "segment", "node", "block"]
Category = Literal["dimension", "shape", "distribution", "intensity", "connectivity", "diversity"]
Scale = Literal["small", "medium", "large"]


class CharacterDescriptor(BaseModel):
    """Metadata of one primary morphometric character."""
    name: str
    element: Element
    category: Category
    scale: Scale
    needs_height: bool = False
    needs_streets: bool = False
    description: str = ""


class MissingReport(BaseModel):
    """Per-column share of missing values and what was done about it."""
    missing_rate: Dict[str, float] = {}
    imputed: Dict[str, float] = {}  # column -> median used
    dropped: List[str] = []


# ============== CLUSTERING MODELS ==============

class BicPoint(BaseModel):
    """Best-of-seeds BIC for one component count."""
    k: int
    bic: float
    loglik: float
    seed: int
    n_iter: int


class SelectionResult(BaseModel):
    """Outcome of the BIC model selection."""
    k: int
    method: Literal["elbow", "fallback", "lowest", "only", "forced"]
    curve: List[BicPoint] = []


# ============== TAXONOMY MODELS ==============

class MergeStep(BaseModel):
    """One agglomeration: cluster ids follow the n + step convention."""
    left: int
    right: int
    height: float
    size: int


# ============== VALIDATION MODELS ==============

class ChiSquaredResult(BaseModel):
    statistic: float
    dof: int
    p_value: float


class ValidationReport(BaseModel):
    """Association between cluster labels and one categorical layer."""
    layer: str
    n: int
    row_labels: List[str]
    column_labels: List[str]
    counts: List[List[int]]
    chi_squared: ChiSquaredResult
    cramers_v: float
    bias_corrected: bool = False
    yates: bool = False
    dropped_cells: int = 0
    folded_categories: List[str] = []


# ============== PIPELINE MODELS ==============

class StageRecord(BaseModel):
    """History entry of an executed pipeline stage."""
    stage: str
    started_at: datetime
    finished_at: datetime
    artifacts: List[str] = []
    notes: List[str] = []
