"""
Exception hierarchy for the urban form taxonomy engine.
Every error carries the process exit code the CLI reports for it.
"""

from typing import Iterable, Optional


class TaxonomyError(Exception):
    """Base class for all engine errors."""

    exit_code: int = 1


class ConfigError(TaxonomyError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class RegistryError(ConfigError):
    """Character registry problem (e.g. duplicate names)."""


class DataError(TaxonomyError):
    """Input data cannot be processed."""

    exit_code = 3


class MissingArtifactError(DataError):
    """A stage needs an artifact that an earlier stage has not written."""

    def __init__(self, artifact: str, stage: str, detail: Optional[str] = None):
        self.artifact = artifact
        self.stage = stage
        message = f"Missing artifact '{artifact}': run the '{stage}' stage first"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericalError(TaxonomyError):
    """A numerical procedure failed (degenerate mixture component, singular matrix...)."""

    exit_code = 4


def format_ids(ids: Iterable, limit: int = 10) -> str:
    """Format a list of ids for error messages, truncating long lists."""
    ids = list(ids)
    shown = ", ".join(str(i) for i in ids[:limit])
    if len(ids) > limit:
        shown += f", ... ({len(ids) - limit} more)"
    return shown
