# ccvec/errors.py
"""Exception hierarchy shared by every ccvec module."""
from typing import Optional


class CCVecError(Exception):
    """Base class for all errors raised by ccvec."""


class ConfigurationError(CCVecError):
    """Invalid hyperparameters, ablation masks or run options."""


class ShapeError(CCVecError):
    """Tensor widths or lengths do not match what an operation expects."""


class CorpusError(CCVecError):
    """Problems with corpus files or their contents."""


class ParseError(CorpusError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class CheckpointError(CCVecError):
    """A checkpoint file could not be read or written."""


class TrainingError(CCVecError):
    """Training could not start or diverged."""


class MetricError(CCVecError):
    """A metric is undefined for the given inputs."""
