from typing import Any, Dict, Optional


class EsscherError(Exception):
    """Base class for every error raised by the engine."""


class DomainError(EsscherError, ValueError):
    """An argument lies outside the effective domain of a function (J, the kappa pole, ...)."""


class BlowUpError(DomainError):
    """
    The Riccati solution explodes before the requested time.

    Raised when the initial value w lies outside the basin of attraction of the
    stable equilibrium and the horizon reaches the explosion time.
    """

    def __init__(self, message: str, blow_up_time: Optional[float] = None):
        super().__init__(message)
        self.blow_up_time = blow_up_time


class UnsupportedParameterError(EsscherError, ValueError):
    """Model parameters are admissible for the dynamics but not for the closed forms."""


class InfeasibleMeasureError(EsscherError, ValueError):
    """A discrete Esscher measure violates the sign, sum or domain constraints."""


class ConfigurationError(EsscherError, ValueError):
    """Inconsistent combination of plan, payoff and grid."""


class SolverFailure(EsscherError, RuntimeError):
    """A dichotomy solver could not produce a root within tolerance."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"
