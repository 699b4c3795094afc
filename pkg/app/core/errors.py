from typing import List, Optional


class SolverError(Exception):
    """Base class for every error raised by the solver library."""
    pass


class ConfigurationError(SolverError, ValueError):
    """Invalid input: bad parameters, out-of-domain points, size guards."""
    pass


class NumericalError(SolverError):
    """A computation produced NaN/Inf or failed to converge."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class BlowUpError(NumericalError):
    """Solution norm exceeded the configured limit."""
    pass


class ConvergenceError(NumericalError):
    """Iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, residuals: Optional[List[float]] = None, step: Optional[int] = None):
        super().__init__(message, step=step)
        self.residuals = list(residuals or [])
