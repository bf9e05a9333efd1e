"""
Asymptotically optimal Esscher measures for European and discretely monitored Asian puts.

The variance proxy minimised here is H_hat(theta) + int_0^T h(theta([t, T])) dt. For a put with
n uniform monitoring dates the minimiser is a discrete measure on those dates with strictly
negative weights, found by dichotomy on a one-dimensional residual.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from engine.engine_helpers import bracketed_root
from engine.errors import ConfigurationError, DomainError, InfeasibleMeasureError, SolverFailure
from engine.ldp_rate import Partition, SignedDiscreteMeasure, g_epsilon_limit
from engine.model_core import ModelSpec, domain_J, limiting_cumulant_h, limiting_cumulant_h_prime

logger = logging.getLogger(__name__)

# right end of the theta bracket; theta = 0 itself is excluded by the log terms
THETA_CEILING = -1e-12
# -Theta_1 within this fraction of |u_minus| is reported as close to the edge of J
EDGE_FRACTION = 0.01
MAX_BRACKET_SHRINKS = 200


# --- Payoff and result types ---
class PayoffSpec(BaseModel):
    """Put payoff on n uniform monitoring dates t_j = j T / n."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["european_put", "asian_put"] = Field(..., description="Payoff family.")
    strike: float = Field(..., ge=0, description="Strike K in price units.")
    maturity: float = Field(..., gt=0, description="Maturity T.")
    n_monitor: int = Field(1, ge=1, description="Number of monitoring dates (1 for European).")

    @model_validator(mode="after")
    def _european_has_one_date(self) -> "PayoffSpec":
        if self.kind == "european_put" and self.n_monitor != 1:
            raise ValueError(f"a European put has one monitoring date, got n_monitor={self.n_monitor}")
        return self

    @property
    def partition(self) -> Partition:
        return Partition.uniform(self.maturity, self.n_monitor)

    @property
    def is_european(self) -> bool:
        return self.n_monitor == 1


@dataclass(frozen=True)
class OptimalMeasure:
    measure: SignedDiscreteMeasure
    objective_value: float
    iterations: int
    residual: float
    near_domain_edge: bool = False
    reflected_in_J: bool = True

    @property
    def thetas(self) -> Tuple[float, ...]:
        return self.measure.weights

    @property
    def cumulative(self) -> Tuple[float, ...]:
        return self.measure.cumulative


## Objective ----------------------------------------------------------------
def h_hat_discrete_average(theta: SignedDiscreteMeasure, K: float, S0: float, n: int) -> float:
    """
    H_hat(theta) = log(K / (1 - sum theta)) - sum_m theta_m log(-theta_m n K / S0 / (1 - sum theta)).

    Raises:
        InfeasibleMeasureError: a weight is >= 0 or the total mass is >= 1.
    """
    weights = theta.weights
    if len(weights) != n:
        raise ConfigurationError(f"{len(weights)} weights for n={n} monitoring dates")
    if any(w >= 0.0 for w in weights):
        raise InfeasibleMeasureError(f"weights must be strictly negative: {weights}")
    mass_gap = 1.0 - sum(weights)
    if mass_gap <= 0.0:
        raise InfeasibleMeasureError(f"1 - sum(theta) = {mass_gap} must be positive")
    if K <= 0.0:
        raise InfeasibleMeasureError(f"log-payoff undefined for strike K={K}")
    return math.log(K / mass_gap) - sum(w * math.log(-w * n * K / S0 / mass_gap) for w in weights)


def _european_bracket(model: ModelSpec) -> Tuple[float, float]:
    lo, _ = domain_J(model).interior()
    return lo, THETA_CEILING


def _check_european_theta(model: ModelSpec, theta: float) -> None:
    J = domain_J(model)
    if not (J.u_minus < theta < 0.0):
        raise InfeasibleMeasureError(f"theta={theta} outside ({J.u_minus}, 0)")


def objective_european(model: ModelSpec, payoff: PayoffSpec, theta: float) -> float:
    """H_hat(theta) + T h(theta) for a single atom at T."""
    _check_european_theta(model, theta)
    measure = SignedDiscreteMeasure(Partition((payoff.maturity,)), (theta,))
    return h_hat_discrete_average(measure, payoff.strike, model.heston.s0, 1) + payoff.maturity * limiting_cumulant_h(
        model, theta
    )


def objective_european_derivative(model: ModelSpec, payoff: PayoffSpec, theta: float) -> float:
    _check_european_theta(model, theta)
    s0 = model.heston.s0
    return math.log((1.0 - theta) * s0 / (-theta * payoff.strike)) + payoff.maturity * limiting_cumulant_h_prime(
        model, theta
    )


def objective_asian(model: ModelSpec, payoff: PayoffSpec, Theta: Sequence[float]) -> float:
    """Objective in the tail masses Theta_1 < ... < Theta_n < 0; +inf when infeasible."""
    if len(Theta) != payoff.n_monitor:
        raise ConfigurationError(f"{len(Theta)} tail masses for n={payoff.n_monitor}")
    measure = SignedDiscreteMeasure.from_cumulative(payoff.partition, Theta)
    try:
        return h_hat_discrete_average(measure, payoff.strike, model.heston.s0, payoff.n_monitor) + g_epsilon_limit(
            model, measure
        )
    except (InfeasibleMeasureError, DomainError):
        return math.inf


def asian_stationarity_residuals(model: ModelSpec, payoff: PayoffSpec, Theta: Sequence[float]) -> np.ndarray:
    """
    Gradient of `objective_asian` in Theta.

    With d_j = Theta_j - Theta_{j+1}:
        j = 1:  log(1 - Theta_1) - log(n K / S0) - log(-d_1) + (T/n) h'(Theta_1)
        j >= 2: (T/n) h'(Theta_j) - log(-d_j) + log(-d_{j-1})
    """
    n = payoff.n_monitor
    step = payoff.maturity / n
    tail = list(Theta) + [0.0]
    gaps = [tail[j] - tail[j + 1] for j in range(n)]
    out = np.empty(n)
    for j in range(n):
        slope = step * limiting_cumulant_h_prime(model, tail[j])
        if j == 0:
            out[j] = (
                math.log(1.0 - tail[0])
                - math.log(n * payoff.strike / model.heston.s0)
                - math.log(-gaps[0])
                + slope
            )
        else:
            out[j] = slope - math.log(-gaps[j]) + math.log(-gaps[j - 1])
    return out


## Solvers ----------------------------------------------------------------
def _edge_flags(model: ModelSpec, cumulative: Sequence[float]) -> Tuple[bool, bool]:
    J = domain_J(model)
    near_edge = abs(cumulative[0] - J.u_minus) <= EDGE_FRACTION * abs(J.u_minus)
    margin_ok = all(J.contains(-c) for c in cumulative)
    if near_edge:
        logger.warning("optimal Theta_1=%s is within %s of u_minus=%s", cumulative[0], EDGE_FRACTION, J.u_minus)
    return near_edge, margin_ok


def solve_european_theta(model: ModelSpec, payoff: PayoffSpec) -> OptimalMeasure:
    """Bisection on the derivative of the European objective over (u_minus, 0)."""
    if not payoff.is_european:
        raise ConfigurationError(f"expected a single monitoring date, got n_monitor={payoff.n_monitor}")
    if payoff.strike <= 0.0:
        raise InfeasibleMeasureError(f"no Esscher measure for strike K={payoff.strike}")
    lo, hi = _european_bracket(model)
    theta, iterations, residual = bracketed_root(
        lambda t: objective_european_derivative(model, payoff, t), lo, hi, what="European theta*"
    )
    measure = SignedDiscreteMeasure(payoff.partition, (theta,))
    near_edge, margin_ok = _edge_flags(model, measure.cumulative)
    logger.info("European theta*=%.6f (K=%s, T=%s, %d iterations)", theta, payoff.strike, payoff.maturity, iterations)
    return OptimalMeasure(
        measure=measure,
        objective_value=objective_european(model, payoff, theta),
        iterations=iterations,
        residual=residual,
        near_domain_edge=near_edge,
        reflected_in_J=margin_ok,
    )


def backward_chain(model: ModelSpec, payoff: PayoffSpec, theta_last: float) -> Optional[List[float]]:
    """
    Tail masses Theta_1..Theta_n implied by Theta_n through the stationarity equations j = n..2.

    Returns None when the chain leaves J.
    """
    n = payoff.n_monitor
    step = payoff.maturity / n
    J = domain_J(model)
    chain = [theta_last]
    gap = theta_last  # d_n = Theta_n - 0
    try:
        for _ in range(n - 1):
            current = chain[-1]
            gap = gap * math.exp(-step * limiting_cumulant_h_prime(model, current))
            nxt = current + gap
            if not J.contains(nxt) or not math.isfinite(nxt):
                return None
            chain.append(nxt)
    except (DomainError, OverflowError):
        return None
    chain.reverse()
    return chain


def _chain_residual(model: ModelSpec, payoff: PayoffSpec, chain: Sequence[float]) -> float:
    n = payoff.n_monitor
    step = payoff.maturity / n
    first, second = chain[0], chain[1]
    return (1.0 - first) * math.exp(step * limiting_cumulant_h_prime(model, first)) * model.heston.s0 / (
        n * payoff.strike
    ) - (second - first)


def solve_asian_thetas(model: ModelSpec, payoff: PayoffSpec) -> OptimalMeasure:
    """
    Dichotomy on Theta_n: the backward chain fixes Theta_{n-1}..Theta_1, and the first-date
    equation gives the residual. Points where the chain leaves J count as too negative.
    """
    if payoff.n_monitor == 1:
        return solve_european_theta(model, payoff)
    if model.has_jumps:
        raise ConfigurationError("Esscher measures with several dates are only supported without jumps")
    if payoff.strike <= 0.0:
        raise InfeasibleMeasureError(f"no Esscher measure for strike K={payoff.strike}")

    def residual(theta_last: float) -> float:
        chain = backward_chain(model, payoff, theta_last)
        return -1.0 if chain is None else _chain_residual(model, payoff, chain)

    lo, hi = _european_bracket(model)
    if residual(hi) <= 0.0:
        raise SolverFailure("Asian residual is not positive near theta=0", {"theta_n": hi, "residual": residual(hi)})

    # shrink lo toward 0 until the chain is feasible
    last_infeasible = None
    for shrink in range(MAX_BRACKET_SHRINKS):
        if backward_chain(model, payoff, lo) is not None:
            break
        last_infeasible = lo
        lo = 0.5 * lo
        logger.debug("Asian chain leaves J, shrinking bracket to lo=%s (%d)", lo, shrink + 1)
    else:
        raise SolverFailure("no feasible Asian chain in the bracket", {"lo": lo, "hi": hi})
    if residual(lo) >= 0.0:
        if last_infeasible is None:
            raise SolverFailure("no sign change of the Asian residual", {"lo": lo, "hi": hi})
        hi, lo = lo, last_infeasible

    theta_last, iterations, res = bracketed_root(residual, lo, hi, what="Asian Theta_n")
    chain = backward_chain(model, payoff, theta_last)
    if chain is None:
        raise SolverFailure("Asian chain infeasible at the root", {"theta_n": theta_last})
    measure = SignedDiscreteMeasure.from_cumulative(payoff.partition, chain)
    near_edge, margin_ok = _edge_flags(model, measure.cumulative)
    logger.info(
        "Asian Theta_1=%.6f Theta_n=%.3e (K=%s, n=%d, %d iterations)",
        chain[0],
        theta_last,
        payoff.strike,
        payoff.n_monitor,
        iterations,
    )
    return OptimalMeasure(
        measure=measure,
        objective_value=objective_asian(model, payoff, chain),
        iterations=iterations,
        residual=res,
        near_domain_edge=near_edge,
        reflected_in_J=margin_ok,
    )


def solve_optimal_measure(model: ModelSpec, payoff: PayoffSpec) -> OptimalMeasure:
    if payoff.is_european:
        return solve_european_theta(model, payoff)
    return solve_asian_thetas(model, payoff)
