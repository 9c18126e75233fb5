"""Custom exceptions for ScalePal."""

from typing import Optional, Sequence


class ScalePalError(Exception):
    """Base exception for all ScalePal errors."""

    pass


class InputError(ScalePalError):
    """Raised when inputs or preconditions are invalid (exit code 2)."""

    pass


class AnalysisRefused(ScalePalError):
    """Raised when an analysis declines to produce a result (exit code 3)."""

    pass


class InputFileNotFound(InputError):
    """Raised when an input file does not exist."""

    def __init__(self, path: str):
        """Initialize with the missing path."""
        self.path = path
        super().__init__(f"Input file not found: '{path}'")


class EmptyInput(InputError):
    """Raised when an input file holds no records."""

    pass


class ParseError(InputError):
    """Raised when an input file cannot be parsed."""

    pass


class ConfigError(InputError):
    """Raised when a command config file is invalid."""

    pass


class SchemaError(InputError):
    """Raised when rows violate the run file schema."""

    def __init__(
        self,
        row: int,
        column: str,
        reason: str,
        diagnostics: Optional[Sequence[str]] = None,
    ):
        """Initialize with the first offending row, its column and the reason."""
        self.row = row
        self.column = column
        self.reason = reason
        self.diagnostics = tuple(diagnostics or ())
        message = f"row {row}, column '{column}': {reason}"
        extra = len(self.diagnostics) - 1
        if extra > 0:
            message += f" (and {extra} more)"
        super().__init__(message)


class MissingField(InputError):
    """Raised when a required field is absent."""

    def __init__(self, name: str):
        """Initialize with the field name."""
        self.field_name = name
        super().__init__(f"missing field '{name}'")


class ValidationError(InputError):
    """Raised when an operation precondition fails."""

    pass


class TooFewRecords(ValidationError):
    """Raised when a series is too short for the requested operation."""

    pass


class NoSeriesCoversLevel(ValidationError):
    """Raised when no series spans a requested token level."""

    def __init__(self, level: float):
        """Initialize with the uncovered token level."""
        self.level = level
        super().__init__(f"no series covers token level {level:g}")


class DegenerateProblem(ValidationError):
    """Raised when a fit has fewer data rows than parameters."""

    pass


class NonFiniteResidual(ValidationError):
    """Raised when a data row produces a non-finite residual."""

    def __init__(self, row: int):
        """Initialize with the offending row index."""
        self.row = row
        super().__init__(f"non-finite residual at data row {row}")


class TooFewPoints(ValidationError):
    """Raised when a power-law fit has too few points."""

    pass


class NonPositiveCoordinate(ValidationError):
    """Raised when log-log fitting receives a non-positive coordinate."""

    pass


class NonPositiveArgument(ValidationError):
    """Raised when a loss-law argument is not positive."""

    def __init__(self, name: str):
        """Initialize with the argument name."""
        self.argument = name
        super().__init__(f"{name} must be positive")


class ExpertCountOutOfRange(ValidationError):
    """Raised when an expert count falls outside [1, 100)."""

    def __init__(self, experts: float):
        """Initialize with the offending expert count."""
        self.experts = experts
        super().__init__(
            f"expert count {experts:g} outside the supported range 1 <= E < 100"
        )


class InsufficientDiversity(ValidationError):
    """Raised when fit data lacks distinct scales or token counts."""

    pass


class InvalidCoefficients(ValidationError):
    """Raised when loss-law coefficients are unusable."""

    pass


class NonPositiveBudget(ValidationError):
    """Raised when a compute budget is not positive."""

    pass


class EmptyBudgetGrid(ValidationError):
    """Raised when a budget grid is empty."""

    pass


class EqualBatchSizes(ValidationError):
    """Raised when the noise-scale estimator gets one batch size twice."""

    pass


class StepsAtOrBelowMinimum(ValidationError):
    """Raised when a step count does not exceed the minimum steps."""

    pass


class TooFewKnobValues(ValidationError):
    """Raised when a contour has fewer than three distinct knob values."""

    def __init__(self, level: float, count: int):
        """Initialize with the token level and the distinct value count."""
        self.level = level
        self.count = count
        super().__init__(
            f"contour at token level {level:g} has {count} distinct knob values, "
            f"need at least 3"
        )


class InvalidSpec(ValidationError):
    """Raised when a synthetic sweep spec is invalid."""

    def __init__(self, field: str, reason: str):
        """Initialize with the field name and reason."""
        self.field_name = field
        super().__init__(f"{field}: {reason}")


class InvalidGrid(ValidationError):
    """Raised when a grid argument is empty, unsorted or too coarse."""

    pass


class InvalidResampleCount(ValidationError):
    """Raised when a bootstrap requests fewer than 100 resamples."""

    pass


class NotConverged(AnalysisRefused):
    """Raised when an operation requires a converged fit."""

    pass


class UnbracketedMinima(AnalysisRefused):
    """Raised when too few contour minima lie inside the sweep."""

    pass
