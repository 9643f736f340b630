"""
Error types raised across the solver.

The CLI turns these into exit codes:
    ConfigError                      -> 2
    StepFailureError / BlowUpError   -> 3
"""


class PeterlinHdgError(Exception):
    """Base class for every error raised on purpose by this package."""


class UnsupportedDegreeError(PeterlinHdgError, ValueError):
    """Polynomial degree or quadrature exactness outside what is tabulated."""


class ConfigError(PeterlinHdgError, ValueError):
    """Bad run configuration (unknown keys, invalid values, bad time grid)."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields or [])


class StepFailureError(PeterlinHdgError, RuntimeError):
    """
    A time step could not be solved.

    Carries enough context to tell a singular factorization apart from a
    residual check that failed.
    """

    def __init__(self, message, step=None, time=None, residual=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.residual = residual


class BlowUpError(PeterlinHdgError, RuntimeError):
    """A monitored norm became non-finite or crossed the blow-up bound."""

    def __init__(self, message, step=None, time=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.diagnostics = diagnostics or {}


class MissingExactSolutionError(PeterlinHdgError, LookupError):
    """The flow case has no closed-form solution to compare against."""
