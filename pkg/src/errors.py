"""
Exception types raised across the pipeline.

Value-shaped errors also derive from ValueError so callers that only know
the builtin can still catch them.
"""

from typing import Optional


class GenRecError(Exception):
    """Base class for every error raised by this package."""


class DataParseError(GenRecError, ValueError):
    """A malformed row in an interaction file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDatasetError(GenRecError, ValueError):
    """An input or a filtering step produced no interactions."""


class SplitError(GenRecError, ValueError):
    """A user cannot be split leave-one-out."""

    def __init__(self, message: str, user: Optional[str] = None):
        self.user = user
        super().__init__(message)


class ShapeError(GenRecError, ValueError):
    """Tensor or table dimensions do not match what an operation expects."""


class DataError(GenRecError, ValueError):
    """Non-finite values in an embedding table."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message)


class NumericError(GenRecError, ArithmeticError):
    """Non-finite values reached a numeric routine."""


class ModeError(GenRecError, ValueError):
    """An operation was called with the wrong quantization mode."""


class CapacityError(GenRecError, RuntimeError):
    """Dedup tokens overflowed the reserved vocabulary block."""


class UniquenessError(GenRecError, ValueError):
    """Two items share the same full identifier."""


class TrainingError(GenRecError, RuntimeError):
    """Training diverged or violated a pipeline invariant."""


class ConfigError(GenRecError, ValueError):
    """The experiment configuration failed validation."""


class MissingPrerequisiteError(GenRecError, FileNotFoundError):
    """A command needs an artifact that another command produces."""

    def __init__(self, artifact: str, command: str):
        self.artifact = artifact
        self.command = command
        super().__init__(
            f"Missing {artifact}; run `unigrec {command}` first to produce it"
        )
