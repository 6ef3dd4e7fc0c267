# attend_affect/errors.py


class AttendAffectError(Exception):
    """Root of every error raised by attend_affect."""


class ConfigurationError(AttendAffectError, ValueError):
    """An illegal model, training, generator or window configuration."""


class DimensionError(AttendAffectError, ValueError):
    """Tensor or sequence shapes that do not fit together."""


class DataValidationError(AttendAffectError, ValueError):
    """Corpus, split or clip contents that violate their invariants."""


class CorpusParseError(DataValidationError):
    """A corpus file that cannot be parsed; names the file and the line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class MetricError(AttendAffectError, ValueError):
    """Metric preconditions not met (length mismatch, too few observers, ...)."""


class NumericError(AttendAffectError, ArithmeticError):
    """NaN losses and gradient-check breaches."""


class NonDeterminismError(NumericError):
    """Two identical forward evaluations produced different values."""


class UsageError(AttendAffectError):
    """Bad command-line usage."""
