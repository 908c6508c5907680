"""Exception hierarchy shared by the library and the command line."""

from typing import Optional, Sequence

# CLI exit statuses
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3


class ElcdError(Exception):
    """Base class for every error raised by the elcd package."""

    exit_code = EXIT_USAGE


class ConfigError(ElcdError):
    """Invalid configuration value."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(ElcdError):
    """Operands of a tensor operation have incompatible shapes."""

    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NumericalError(ElcdError):
    """Non-finite values or numerical breakdown (divergence, singularity)."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class SingularMatrixError(NumericalError):
    """LU factorization met a pivot below the singularity threshold."""

    def __init__(self, pivot_index: int, pivot_value: float, batch_index: Optional[int] = None):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        self.batch_index = batch_index
        where = f" in batch item {batch_index}" if batch_index is not None else ""
        super().__init__(f"singular matrix{where}: pivot {pivot_index} has magnitude {abs(pivot_value):.3e}")


class DatasetFormatError(ElcdError):
    """Malformed trajectory CSV or metadata sidecar."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        prefix = ""
        if path:
            prefix += f"{path}"
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class CheckpointError(ElcdError):
    """Checkpoint version, shape or content problem."""


class VerificationError(ElcdError):
    """A contraction check could not be carried out or failed."""

    exit_code = EXIT_VERIFICATION

    def __init__(self, message: str, residual_norm: Optional[float] = None):
        self.residual_norm = residual_norm
        super().__init__(message)
