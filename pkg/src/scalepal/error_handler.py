"""Error handling utilities for ScalePal."""

import sys
from typing import Optional

from scalepal.constants import EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, EXIT_REFUSED
from scalepal.exceptions import (
    AnalysisRefused,
    EqualBatchSizes,
    ExpertCountOutOfRange,
    InputError,
    MissingField,
    ScalePalError,
    SchemaError,
    UnbracketedMinima,
)


def exit_code_for(error: Optional[BaseException]) -> int:
    """
    Map an exception to the process exit code.

    Args:
        error: The exception raised by a command, or None on success.

    Returns:
        0 on success, 2 for input errors, 3 for refused analyses, 1 otherwise.
    """
    if error is None:
        return EXIT_OK
    if isinstance(error, InputError):
        return EXIT_INPUT
    if isinstance(error, AnalysisRefused):
        return EXIT_REFUSED
    return EXIT_INTERNAL


class ErrorHandler:
    """Centralized error handling for ScalePal commands."""

    def __init__(self, verbose: bool = False):
        """
        Initialize error handler.

        Args:
            verbose: Whether to show detailed error messages.
        """
        self.verbose = verbose
        self.error_count = 0

    def handle_error(self, error: Exception, context: Optional[str] = None) -> str:
        """
        Handle an error and return formatted message.

        Args:
            error: The exception to handle.
            context: Optional input path or command being processed.

        Returns:
            Formatted error message.
        """
        self.error_count += 1

        if isinstance(error, SchemaError):
            return self._handle_schema_error(error, context)
        elif isinstance(error, InputError):
            return self._handle_input_error(error, context)
        elif isinstance(error, AnalysisRefused):
            return self._handle_refused(error, context)
        elif isinstance(error, ScalePalError):
            return self._handle_generic_scalepal_error(error, context)
        else:
            return self._handle_unexpected_error(error, context)

    def exit_code_for(self, error: Optional[BaseException]) -> int:
        """Exit code for an error handled by this handler."""
        return exit_code_for(error)

    def _handle_schema_error(self, error: SchemaError, context: Optional[str]) -> str:
        """Handle SchemaError, listing every diagnostic when verbose."""
        message = f"✗ Schema error: {error}"

        if self.verbose:
            for diagnostic in error.diagnostics:
                message += f"\n  - {diagnostic}"
            if context:
                message += f"\n  Input: '{context}'"

        return message

    def _handle_input_error(self, error: InputError, context: Optional[str]) -> str:
        """Handle InputError and its validation subclasses."""
        message = f"✗ Invalid input: {error}"

        if self.verbose:
            message += f"\n  Error type: {type(error).__name__}"
            if context:
                message += f"\n  Input: '{context}'"

        return message

    def _handle_refused(self, error: AnalysisRefused, context: Optional[str]) -> str:
        """Handle AnalysisRefused."""
        message = f"✗ Analysis refused: {error}"

        if self.verbose and context:
            message += f"\n  Input: '{context}'"

        return message

    def _handle_generic_scalepal_error(
            self,
            error: ScalePalError,
            context: Optional[str]
    ) -> str:
        """Handle generic ScalePalError."""
        message = f"✗ Error: {error}"

        if self.verbose and context:
            message += f"\n  Input: '{context}'"

        return message

    def _handle_unexpected_error(self, error: Exception, context: Optional[str]) -> str:
        """Handle unexpected errors."""
        message = f"✗ Unexpected error: {error}"

        if self.verbose:
            message += f"\n  Error type: {type(error).__name__}"
            if context:
                message += f"\n  Input: '{context}'"

        return message

    def print_error(
            self,
            error: Exception,
            context: Optional[str] = None,
            file=None
    ) -> None:
        """
        Print error message to specified file.

        Args:
            error: The exception to handle.
            context: Optional input path or command being processed.
            file: File to write to (default: stderr).
        """
        if file is None:
            file = sys.stderr

        message = self.handle_error(error, context)
        print(message, file=file)

    def reset(self) -> None:
        """Reset error counter."""
        self.error_count = 0


def suggest_fix(error: Exception) -> Optional[str]:
    """
    Suggest a fix for common input mistakes.

    Args:
        error: The error that occurred.

    Returns:
        Suggestion string or None.
    """
    if isinstance(error, SchemaError) and "missing" in error.reason:
        return (
            f"Add a '{error.column}' column; the run header is "
            "run_id,step,tokens,loss,params,flops,model_scale,experts,batch_size,"
            "seq_len,learning_rate,loss_kind"
        )

    if isinstance(error, MissingField):
        return (
            f"Provide '{error.field_name}' in the run file or pick another "
            "--derive-scale rule"
        )

    if isinstance(error, ExpertCountOutOfRange):
        return "Expert laws are only defined for 1 <= E < 100; drop or rescale those runs"

    if isinstance(error, UnbracketedMinima):
        return (
            "Widen the sweep so optima fall inside the grid, or pass "
            "--include-boundary to fit boundary minima anyway"
        )

    if isinstance(error, EqualBatchSizes):
        return "Measure gradient norms at two different batch sizes"

    return None
