"""Exception types shared across the package."""


class FairHingeError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(FairHingeError, ValueError):
    """An assignment or vector has the wrong length for the model."""


class StructureError(FairHingeError, ValueError):
    """A ground model violates a structural precondition (e.g. a constraint
    that cannot be solved for a unique auxiliary variable)."""


class CoverageError(FairHingeError, ValueError):
    """A predictor does not cover every target atom it must cover."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class MetricUndefinedError(FairHingeError, ValueError):
    """A fairness metric is undefined for the given inputs (e.g. a group
    with zero predictions)."""


class NumericError(FairHingeError, ArithmeticError):
    """A numeric computation produced NaN or infinity."""


class ParseError(FairHingeError, ValueError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" ({loc})"
        super().__init__(f"{message}{loc}")
        self.path = path
        self.line = line


class ConfigError(FairHingeError, ValueError):
    """An experiment configuration is invalid."""


class DataError(FairHingeError, ValueError):
    """A dataset is missing, inconsistent, or unusable."""
