"""
Urban Form Taxonomy Configuration
Pipeline settings from TOML, runtime overrides from the environment
"""

import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

load_dotenv()


class Section(BaseModel):
    """Base for config sections: unknown keys are an error, not a silent typo."""

    model_config = ConfigDict(extra="forbid")


class InputConfig(Section):
    buildings: Optional[Path] = None
    streets: Optional[Path] = None
    id_property: Optional[str] = "id"
    height_property: Optional[str] = "height"
    assume_projected: bool = True
    snap_tolerance: float = Field(0.1, ge=0.0)


class TessellationConfig(Section):
    limit: float = Field(100.0, gt=0.0)
    densify: float = Field(0.5, gt=0.0)
    erosion: float = Field(0.0, ge=0.0)
    separation: float = Field(1e-4, ge=0.0)
    sliver_area: float = Field(1e-6, ge=0.0)


class GraphConfig(Section):
    contiguity: Literal["queen", "rook"] = "queen"
    tolerance: float = Field(1e-6, ge=0.0)
    constrained: bool = False


class CharactersConfig(Section):
    registry: Optional[List[str]] = None
    floor_height: float = Field(3.0, gt=0.0)
    large_scale_k: int = Field(3, ge=1)


class ContextConfig(Section):
    k: int = Field(3, ge=0)
    bins: int = Field(10, ge=1)
    missing_drop_threshold: float = Field(0.5, ge=0.0, le=1.0)


class ClusteringConfig(Section):
    k_min: int = Field(1, ge=1)
    k_max: int = Field(8, ge=1)
    k: Optional[int] = Field(None, ge=1)
    seeds_per_k: int = Field(3, ge=1)
    seed: int = 42
    covariance: Literal["full", "diag"] = "full"
    max_iter: int = Field(300, ge=1)
    tol: float = Field(1e-6, gt=0.0)
    reg_scale: float = Field(1e-6, ge=0.0)
    pca_guard: bool = True
    pca_variance: float = Field(0.95, gt=0.0, le=1.0)
    save_responsibilities: bool = False

    @model_validator(mode="after")
    def _check_range(self) -> "ClusteringConfig":
        if self.k_min > self.k_max:
            raise ValueError(f"k_min ({self.k_min}) must not exceed k_max ({self.k_max})")
        return self


class PoolConfig(Section):
    tag: str
    run_dir: Path


class TaxonomyConfig(Section):
    n_branches: int = Field(2, ge=1)
    standardization: Literal["pooled", "per_city"] = "pooled"
    tag: str = "city"
    pools: List[PoolConfig] = []


class ValidationLayer(Section):
    name: str
    path: Path
    id_column: str = "building_id"
    category_column: str = "category"
    prevailing_k: Optional[int] = Field(None, ge=0)


class ValidationConfig(Section):
    min_share: float = Field(0.01, ge=0.0, lt=1.0)
    yates: bool = False
    bias_corrected: bool = False
    layers: List[ValidationLayer] = []


class PipelineConfig(Section):
    """Complete, validated configuration of one pipeline run."""

    input: InputConfig = InputConfig()
    tessellation: TessellationConfig = TessellationConfig()
    graph: GraphConfig = GraphConfig()
    characters: CharactersConfig = CharactersConfig()
    context: ContextConfig = ContextConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    taxonomy: TaxonomyConfig = TaxonomyConfig()
    validation: ValidationConfig = ValidationConfig()
    output_dir: Path = Path("out")
    threads: int = Field(0, ge=0)

    @field_validator("output_dir", mode="before")
    @classmethod
    def _coerce_path(cls, value: Union[str, Path]) -> Path:
        return Path(value)

    def resolved(self) -> Dict[str, Any]:
        """JSON-safe dump used in run metadata."""
        return self.model_dump(mode="json")


def _resolve_paths(cfg: PipelineConfig, base: Path) -> PipelineConfig:
    """Make relative paths relative to the config file's directory."""

    def fix(path: Optional[Path]) -> Optional[Path]:
        if path is None or path.is_absolute():
            return path
        return (base / path).resolve()

    cfg.input.buildings = fix(cfg.input.buildings)
    cfg.input.streets = fix(cfg.input.streets)
    for layer in cfg.validation.layers:
        layer.path = fix(layer.path)
    for pool in cfg.taxonomy.pools:
        pool.run_dir = fix(pool.run_dir)
    cfg.output_dir = fix(cfg.output_dir)
    return cfg


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Load and validate a pipeline configuration.

    Args:
        path: TOML file; None gives the defaults
        overrides: Top-level or dotted keys ("clustering.k") applied last

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: unreadable file or invalid values
    """
    data: Dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}") from e
        base = path.parent.resolve()

    env = runtime_settings()
    if env.threads is not None:
        data["threads"] = env.threads
    if env.output_dir is not None:
        data["output_dir"] = env.output_dir

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        *parents, leaf = key.split(".")
        for parent in parents:
            target = target.setdefault(parent, {})
        target[leaf] = value

    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    return _resolve_paths(cfg, base)


class Config:
    """Runtime settings read from the environment."""

    def __init__(self):
        threads = os.getenv("URBAN_TAXONOMY_THREADS")
        try:
            self.threads: Optional[int] = int(threads) if threads else None
        except ValueError:
            raise ConfigError(f"URBAN_TAXONOMY_THREADS must be an integer, got {threads!r}")
        self.output_dir: Optional[str] = os.getenv("URBAN_TAXONOMY_OUTPUT_DIR")
        self.log_level: Optional[str] = os.getenv("URBAN_TAXONOMY_LOG_LEVEL")

    def status(self) -> Dict[str, Any]:
        """Get runtime settings summary."""
        return {
            "threads": self.threads,
            "output_dir": self.output_dir,
            "log_level": self.log_level,
        }


def runtime_settings() -> Config:
    """Fresh read of the environment (tests patch variables between calls)."""
    return Config()


# Global config instance
config = Config()
