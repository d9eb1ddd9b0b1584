"""Package-level error taxonomy, mapped to CLI exit codes in cli.py."""

__all__ = ["ConfigError", "DataFormatError", "GeometryError", "CheckpointError"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DataFormatError(IOError):
    """Malformed or truncated dataset/CSV/log file."""


class GeometryError(ValueError):
    """Array dimensions disagree between artifacts (dataset, checkpoint, config)."""


class CheckpointError(IOError):
    """Missing, corrupt, or incompatible model checkpoint."""
