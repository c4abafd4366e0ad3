"""Exception hierarchy.

Configuration problems map to CLI exit code 2, numerical failures to 3.
"""

from __future__ import annotations


class TransportLabError(Exception):
    """Base class for all package errors."""


class ConfigError(TransportLabError, ValueError):
    """Invalid configuration or input; ``key`` names the offending field."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        self.bare_message = message
        if key is not None and key not in message:
            message = f"{key}: {message}"
        super().__init__(message)


class FluxRangeError(ConfigError):
    """Argument outside the sampled range of a tabulated flux."""


class OracleSizeError(TransportLabError):
    """Grid too large for an O(N^2) direct-sum oracle; use the FFT path."""


class StructuralUnavailable(TransportLabError):
    """The divergence split is only defined for Poisson/HJ couplings."""


class NumericalError(TransportLabError):
    """Failure of a numerical procedure (CFL rejection, divergence)."""

    def __init__(self, message: str, time: float | None = None):
        self.time = time
        super().__init__(message)

    def at_time(self, time: float) -> "NumericalError":
        self.time = time
        return self

    def __str__(self) -> str:
        base = super().__str__()
        if self.time is not None:
            return f"{base} (at t={self.time:.6g})"
        return base


class CFLViolation(NumericalError):
    """A time step exceeded the admissible CFL numbers."""


class HJDivergence(NumericalError):
    """Picard iteration for the Hamilton-Jacobi coupling did not converge."""

    def __init__(self, message: str, last_change: float, iterations: int, time: float | None = None):
        self.last_change = last_change
        self.iterations = iterations
        super().__init__(message, time)
