"""
Exception types shared by every stage of the pipeline.

The command line maps each family to a stable exit code (see run.py).
"""


class DerainError(Exception):
    """Base class for all pipeline errors."""


class ConfigurationError(DerainError):
    """Invalid configuration, dataset layout or stage ordering."""


class MissingArtifactError(DerainError):
    """A prerequisite checkpoint (or other artifact) does not exist."""

    def __init__(self, message, paths=None):
        super().__init__(message)
        self.paths = list(paths or [])


class ContractError(DerainError, ValueError):
    """Inputs violate the documented contract of a loss or metric."""


class ShapeError(DerainError, ValueError):
    """Image or feature dimensions are incompatible with the operation."""


class StateError(DerainError, RuntimeError):
    """Operation called in the wrong state (e.g. backward before forward)."""


class ScoringError(DerainError):
    """A quality score could not be computed from the available statistics."""


class ImageFormatError(DerainError):
    """File exists but cannot be decoded as an image."""
