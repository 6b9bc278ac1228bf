"""Exception types shared across the package.

The CLI maps ``ValidationError`` subtypes to exit code 1 and runtime
failures (``ConvergenceError``, I/O) to exit code 2.
"""


class SemreoptError(Exception):
    """Base class for all package errors."""


class ValidationError(SemreoptError):
    """Invalid input data or configuration."""


class ParseError(ValidationError):
    """Malformed input file; carries the offending location."""

    def __init__(self, message: str, *, path: str | None = None, record: object = None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if record is not None:
            loc.append(f"record {record}")
        prefix = " @ ".join(loc)
        super().__init__(f"{message}" + (f" [{prefix}]" if prefix else ""))
        self.path = path
        self.record = record


class VocabularyMismatchError(ValidationError):
    """Data references labels or dimensions not in the vocabulary."""


class ConfigError(ValidationError):
    """Inconsistent or out-of-range configuration values."""


class EmptyStatisticsError(ValidationError):
    """Co-occurrence statistics have no instances to work with."""


class AlignmentError(ValidationError):
    """Before/after detection sets cannot be aligned."""


class EvaluationError(ValidationError):
    """Evaluation is impossible on the given inputs (e.g. no ground truth)."""


class ConvergenceError(SemreoptError):
    """An iterative solver failed to converge."""

    def __init__(self, message: str, *, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.6g} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
