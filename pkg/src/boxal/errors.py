"""Typed errors shared across the engine.

The CLI maps these onto exit codes: config problems exit 2, data and
schema problems exit 3, anything else exits 4.
"""


class BoxalError(Exception):
    """Base class for all engine errors."""


class ConfigError(BoxalError):
    """Invalid configuration value or combination (exit code 2)."""


class PoolParseError(BoxalError):
    """Malformed pool record line; message names the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PoolSchemaError(BoxalError):
    """Dimension or field mismatch against the configured record schema."""


class IntegrityError(BoxalError):
    """Duplicate identifiers or repeated annotation requests."""


class DegeneratePoolError(BoxalError):
    """Pool lacks the spread needed for a density interval."""


class EmptyHistogramError(BoxalError):
    """Signal that a record has no boxes; caller decides the fallback."""
