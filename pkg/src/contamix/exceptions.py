"""Exception types shared across the package."""


class ContamixError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ContamixError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(ContamixError, ValueError):
    """Malformed input data (CSV parse failures, shape mismatches)."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalDegeneracyError(ContamixError, ArithmeticError):
    """A conditional expectation or probability collapsed numerically.

    Carries the (observation, component) pair that triggered the failure
    when raised from inside an E-step.
    """

    def __init__(self, message, observation=None, component=None):
        if observation is not None or component is not None:
            message = f"{message} [observation={observation}, component={component}]"
        super().__init__(message)
        self.observation = observation
        self.component = component


class DegenerateStartError(ContamixError, RuntimeError):
    """A single fit start collapsed (empty component, singular update)."""


class FitFailureError(ContamixError, RuntimeError):
    """Every start of a fit failed; carries the per-start failure reasons."""

    def __init__(self, reasons):
        self.reasons = list(reasons)
        lines = "; ".join(f"start {i}: {r}" for i, r in enumerate(self.reasons))
        super().__init__(f"all starts failed ({lines})")


class ConfigError(ContamixError, ValueError):
    """Inconsistent or invalid run configuration."""
