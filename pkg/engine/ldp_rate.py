"""
Large-deviations quantities built on the limiting cumulant h: the finite-partition cumulant
Lambda_tau, the Legendre transform h*, the discrete rate function and the G_eps limit used by
the Esscher objective.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from engine.engine_helpers import ExtendedReal, Finite, PositiveInfinity, bracketed_root
from engine.errors import DomainError
from engine.model_core import (
    ModelSpec,
    domain_J,
    limiting_cumulant_h,
    limiting_cumulant_h_prime,
    riccati_phi,
    riccati_psi,
    stable_equilibrium,
)

logger = logging.getLogger(__name__)


# --- Discrete time structures ---
@dataclass(frozen=True)
class Partition:
    """Monitoring dates 0 < t_1 < ... < t_n = T."""

    times: Tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times:
            raise ValueError("a partition needs at least one date")
        if times[0] <= 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"partition dates must be positive and strictly increasing: {times}")

    @classmethod
    def uniform(cls, maturity: float, n: int) -> "Partition":
        """Dates t_j = j T / n, with t_n = T exactly."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return cls(tuple(maturity * j / n for j in range(1, n)) + (float(maturity),))

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def maturity(self) -> float:
        return self.times[-1]

    @property
    def increments(self) -> Tuple[float, ...]:
        """t_j - t_{j-1} with t_0 = 0."""
        previous = (0.0,) + self.times[:-1]
        return tuple(b - a for a, b in zip(previous, self.times))


@dataclass(frozen=True)
class SignedDiscreteMeasure:
    """theta = sum_j theta_j delta_{t_j}, with tail masses Theta_j = sum_{k >= j} theta_k."""

    support: Partition
    weights: Tuple[float, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)
        if len(weights) != self.support.n:
            raise ValueError(f"{len(weights)} weights for {self.support.n} dates")

    @classmethod
    def zero(cls, support: Partition) -> "SignedDiscreteMeasure":
        return cls(support, (0.0,) * support.n)

    @classmethod
    def from_cumulative(cls, support: Partition, cumulative: Sequence[float]) -> "SignedDiscreteMeasure":
        """Inverse of `cumulative`: theta_j = Theta_j - Theta_{j+1}, Theta_{n+1} = 0."""
        tail = list(cumulative) + [0.0]
        return cls(support, tuple(tail[j] - tail[j + 1] for j in range(len(cumulative))))

    @cached_property
    def cumulative(self) -> Tuple[float, ...]:
        out: List[float] = []
        running = 0.0
        for w in reversed(self.weights):
            running += w
            out.append(running)
        return tuple(reversed(out))

    @property
    def total_mass(self) -> float:
        return self.cumulative[0]

    def is_feasible(self, model: ModelSpec) -> bool:
        J = domain_J(model)
        return all(J.contains(c) for c in self.cumulative)


@dataclass(frozen=True)
class DiscretePath:
    """Values x_{t_1}, ..., x_{t_n} on a partition; x_0 = 0."""

    partition: Partition
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != self.partition.n:
            raise ValueError(f"{len(values)} values for {self.partition.n} dates")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("path values must be finite")

    @property
    def increments(self) -> Tuple[float, ...]:
        previous = (0.0,) + self.values[:-1]
        return tuple(b - a for a, b in zip(previous, self.values))


## Cumulants ----------------------------------------------------------------
def _piecewise_integral(model: ModelSpec, theta: SignedDiscreteMeasure) -> float:
    return sum(dt * limiting_cumulant_h(model, c) for dt, c in zip(theta.support.increments, theta.cumulative))


def lambda_tau(model: ModelSpec, theta: SignedDiscreteMeasure) -> ExtendedReal:
    """sum_j (t_j - t_{j-1}) h(Theta_j), or +inf when some Theta_j leaves J."""
    if not theta.is_feasible(model):
        return PositiveInfinity()
    return Finite(_piecewise_integral(model, theta))


def g_epsilon_limit(model: ModelSpec, theta: SignedDiscreteMeasure) -> float:
    """lim_eps G_eps(theta) = int_0^T h(theta([t, T])) dt for a discrete measure."""
    if not theta.is_feasible(model):
        raise DomainError(f"tail masses {theta.cumulative} leave J={domain_J(model)}")
    return _piecewise_integral(model, theta)


## Legendre transform ----------------------------------------------------------------
def legendre_h_star(model: ModelSpec, y: float) -> float:
    """
    h*(y) = sup over J of (theta y - h(theta)).

    The maximiser solves h'(theta) = y; h' is increasing, so it is bracketed by the interior
    of J whenever y lies in the range of h' there. Otherwise the supremum sits at an end of J.
    """
    J = domain_J(model)
    lo, hi = J.interior()
    slope_lo = limiting_cumulant_h_prime(model, lo)
    slope_hi = limiting_cumulant_h_prime(model, hi)
    if slope_lo < y < slope_hi:
        # the objective is flat at the maximiser, so the slope residual is not checked
        theta_hat, _, _ = bracketed_root(
            lambda t: y - limiting_cumulant_h_prime(model, t), lo, hi, residual_tol=math.inf, what="Legendre maximiser"
        )
        return theta_hat * y - limiting_cumulant_h(model, theta_hat)
    logger.debug("y=%s outside h' range on the interior of J, using end points", y)
    return max(u * y - limiting_cumulant_h(model, u) for u in (J.u_minus, lo, hi, J.u_plus))


def rate_function_discrete(model: ModelSpec, x: DiscretePath) -> float:
    """Rate function of (X_{t_1}, ..., X_{t_n}); the supremum separates across increments."""
    return sum(
        dt * legendre_h_star(model, dx / dt) for dt, dx in zip(x.partition.increments, x.increments)
    )


## Scaling-limit verification ----------------------------------------------------------------
@dataclass
class ScalingReport:
    """Errors of psi(dt/eps) -> w(u) and eps phi(dt/eps) -> dt h(u) per (u, eps)."""

    dt: float
    rows: List[dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["u", "eps", "psi_error", "phi_error"])

    @property
    def monotone(self) -> bool:
        """True when both errors are non-increasing along the eps grid for every u."""
        frame = self.to_frame()
        for _, group in frame.groupby("u", sort=False):
            for column in ("psi_error", "phi_error"):
                if np.any(np.diff(group[column].to_numpy()) > 0.0):
                    return False
        return True


def verify_scaling_limits(
    model: ModelSpec,
    u_grid: Sequence[float],
    eps_grid: Sequence[float],
    dt: float = 1.0,
    w: float = 0.0,
) -> ScalingReport:
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError(f"eps_grid must be decreasing: {list(eps_grid)}")
    report = ScalingReport(dt=dt)
    for u in u_grid:
        w_limit = stable_equilibrium(model, u)
        h_limit = dt * limiting_cumulant_h(model, u)
        for eps in eps_grid:
            horizon = dt / eps
            report.rows.append(
                {
                    "u": float(u),
                    "eps": float(eps),
                    "psi_error": abs(riccati_psi(model, horizon, u, w) - w_limit),
                    "phi_error": abs(eps * riccati_phi(model, horizon, u, w) - h_limit),
                }
            )
    if not report.monotone:
        logger.warning("scaling errors are not monotone along eps=%s", list(eps_grid))
    return report
