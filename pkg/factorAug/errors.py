"""
Exception hierarchy for factorAug.
Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional

from factorAug.constants import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_NUMERICAL_ERROR, EXIT_UNEXPECTED


class FactorAugError(Exception):
    """Base class for all factorAug errors."""

    exit_code: int = EXIT_UNEXPECTED


class ConfigError(FactorAugError, ValueError):
    """Invalid or unknown configuration."""

    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = ""
        if key:
            location += f" at '{key}'"
        if line is not None:
            location += f" (line {line})"
        super().__init__(f"{message}{location}")


class DataError(FactorAugError, ValueError):
    """Input data could not be read or does not satisfy a precondition."""

    exit_code = EXIT_DATA_ERROR


class NumericalError(FactorAugError, ArithmeticError):
    """A numerical procedure failed (rank deficiency, divergence, zero variance)."""

    exit_code = EXIT_NUMERICAL_ERROR


class PipelineStageError(FactorAugError):
    """An error raised inside one stage of one evaluation window."""

    def __init__(self, window: int, stage: str, cause: Exception):
        self.window = window
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_UNEXPECTED)
        super().__init__(f"window {window}, stage '{stage}': {cause}")


class ExternalLearnerError(FactorAugError):
    """The external learner command failed, timed out or returned bad predictions."""
