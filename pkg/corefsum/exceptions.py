"""
Custom exceptions for corefsum.

Every error carries the exit code the CLI reports for its failure class,
so library code can raise and only ``cli.py`` decides how to exit.
"""


class CorefSumError(Exception):
    """Base exception for all corefsum-related errors."""

    exit_code = 1


class ValidationError(CorefSumError):
    """Raised when input data violates a documented invariant."""

    exit_code = 3


class DialogueError(ValidationError):
    """Raised when a dialogue cannot be flattened or encoded."""

    pass


class CorefAnnotationError(ValidationError):
    """Raised when coreference clusters are malformed or inconsistent."""

    pass


class DataFormatError(ValidationError):
    """Raised when a JSON or JSONL record cannot be parsed."""

    def __init__(self, message: str, path: str = "", line: int = 0):
        location = f"{path}:{line}: " if path and line else ""
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class ShapeError(ValidationError):
    """Raised when tensor shapes do not line up."""

    pass


class CheckpointError(ValidationError):
    """Raised when a checkpoint is malformed or does not match its vocabulary."""

    pass


class ConfigurationError(ValidationError):
    """Raised when there's an issue with configuration."""

    pass


class ArtifactIOError(CorefSumError):
    """Raised when an input cannot be read or an output cannot be written."""

    exit_code = 2


class NumericError(CorefSumError):
    """Raised when training or gradient checking meets non-finite values."""

    exit_code = 4
