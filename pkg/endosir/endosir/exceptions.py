"""
Error hierarchy shared by every endosir app.

Each error belongs to one exit-code category used by the management
commands: 2 for configuration problems, 3 for input data problems and
4 for numerical failures. Errors can be annotated while they propagate
through ``context`` (for example the stage-one column or the replicate
that failed) and serialised with ``to_record``.
"""

from typing import Any, Dict, Optional

CONFIG_ERROR = 2
DATA_ERROR = 3
NUMERICAL_ERROR = 4


class EndosirError(Exception):
    """Base class for all endosir errors."""

    exit_code = NUMERICAL_ERROR

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.context: Dict[str, Any] = dict(context)

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in sorted(self.context.items()))
        return f"{self.message} ({details})"

    def annotate(self, **context: Any) -> "EndosirError":
        """Attach extra context and return the error for re-raising."""
        self.context.update(context)
        return self

    def to_record(self) -> Dict[str, Any]:
        """
        Return the machine-readable error record written by the CLI.

        Returns:
            dict: ``error`` (class name), ``message``, ``exit_code`` and
            ``context`` (values converted to JSON-friendly types).
        """
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "context": {key: _plain(value) for key, value in self.context.items()},
        }


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if hasattr(value, "item"):
        return value.item()
    return str(value)


# Numerical failures

class NonSymmetric(EndosirError):
    pass


class NonFinite(EndosirError):
    pass


class NotPositiveDefinite(EndosirError):
    def __init__(self, message: str = "matrix is not positive definite", pivot: Optional[int] = None, **context: Any):
        super().__init__(message, pivot=pivot, **context)
        self.pivot = pivot


class RankDeficient(EndosirError):
    def __init__(self, message: str = "columns are linearly dependent", column: Optional[int] = None, **context: Any):
        super().__init__(message, column=column, **context)
        self.column = column


class DegenerateLabels(EndosirError):
    pass


class MaxIterations(EndosirError):
    """Solver hit its sweep limit; ``fit`` holds the best iterate found."""

    def __init__(self, message: str = "coordinate descent did not converge", fit: Any = None, **context: Any):
        super().__init__(message, **context)
        self.fit = fit


class InvalidProblem(EndosirError):
    pass


class DegenerateFolds(EndosirError):
    pass


class TooFewObservations(EndosirError):
    pass


class SliceTooSmall(EndosirError):
    pass


class EigenvalueTooSmall(EndosirError):
    def __init__(self, message: str = "eigenvalue below guard", k: Optional[int] = None, **context: Any):
        super().__init__(message, k=k, **context)
        self.k = k


class DegenerateCluster(EndosirError):
    pass


class CannotAchievePD(EndosirError):
    pass


class DimensionMismatch(EndosirError):
    pass


class StabilityFailed(EndosirError):
    pass


# Configuration and data problems

class ConfigInvalid(EndosirError):
    exit_code = CONFIG_ERROR

    def __init__(self, message: str = "invalid configuration", key: Optional[str] = None, **context: Any):
        super().__init__(message, key=key, **context)
        self.key = key


class SchemaMismatch(EndosirError):
    exit_code = DATA_ERROR

    def __init__(self, message: str = "input does not match the expected schema",
                 row: Optional[int] = None, column: Optional[str] = None, **context: Any):
        super().__init__(message, row=row, column=column, **context)
        self.row = row
        self.column = column


class IoError(EndosirError):
    exit_code = DATA_ERROR


# Errors a batch task (replicate, subsample) records and survives.
# numpy.linalg.LinAlgError subclasses ValueError.
BATCH_ERRORS = (EndosirError, ValueError, ArithmeticError)
