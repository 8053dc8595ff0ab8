"""Exception types shared across the package."""
from __future__ import annotations


class SimipuError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SimipuError):
    """Invalid configuration value, range, or layer plan."""


class DimensionError(SimipuError):
    """Array shapes incompatible with the requested operation."""


class NumericError(SimipuError):
    """Non-finite or otherwise unusable numeric values."""


class ParseError(SimipuError):
    """Malformed external file content."""


class EmptyCloudError(SimipuError):
    """A filtering step removed every point."""


class EmptyMatchError(SimipuError):
    """No valid correspondence pairs could be built."""


class UndersizedSceneError(SimipuError):
    """Scene has too few points for the configured encoder."""


class GenerationError(SimipuError):
    """Synthetic scene generation could not satisfy its constraints."""


class DegenerateBatchError(SimipuError):
    """Batch too small for a contrastive loss (no negatives exist)."""


class CheckpointError(SimipuError):
    """Checkpoint file malformed or incompatible with the model."""
