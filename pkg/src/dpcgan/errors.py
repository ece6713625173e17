"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DpcganError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DpcganError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Array or vector dimensions do not agree."""


class SchemaError(ValidationError):
    """Schema file or table header is malformed or inconsistent."""


class RowValidationError(ValidationError):
    """A data row failed validation; carries the 1-based line number and column."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


class RuleParseError(ValidationError):
    """Rule file could not be type-checked against the schema."""

    def __init__(self, message: str, rule_id: str | None = None):
        super().__init__(message)
        self.rule_id = rule_id


class StateError(DpcganError, RuntimeError):
    """Operation called in the wrong state (e.g. backward before forward)."""


class NumericError(DpcganError, ArithmeticError):
    """Non-finite values encountered in a numeric routine."""


class GenerationError(DpcganError, RuntimeError):
    """Toy data generation could not satisfy its own rule set."""


class CapabilityError(DpcganError, RuntimeError):
    """Requested attack needs a model component that was not supplied."""


class CheckpointError(DpcganError, ValueError):
    """Checkpoint file is corrupt or has an unsupported format version."""
