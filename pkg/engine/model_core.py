"""
Closed-form Laplace-transform machinery for the Heston model and the Heston model with
negative exponential jumps.

Both models share the variance dynamics, so R, chi, gamma and psi are identical; the jumps
only add kappa_tilde to F, phi and h.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from engine.errors import BlowUpError, DomainError, UnsupportedParameterError

# radicand values in [-RADICAND_DUST, 0) are floating-point dust and read as 0
RADICAND_DUST = 1e-14
# open end of J at -alpha for the jump model
JUMP_POLE_GUARD = 1e-9


# --- Parameter models ---
class HestonParams(BaseModel):
    """
    Heston parameters under the pricing measure.
    dX = -V/2 dt + sqrt(V) dW1, dV = lambda (mu - V) dt + zeta sqrt(V) dW2, d<W1,W2> = rho dt.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(..., alias="lambda", gt=0, description="Mean-reversion speed of the variance (1/time).")
    mu: float = Field(..., gt=0, description="Long-run variance level.")
    zeta: float = Field(..., gt=0, description="Volatility of the variance.")
    rho: float = Field(..., ge=-1.0, le=1.0, description="Correlation between the two Brownian motions.")
    v0: float = Field(..., gt=0, description="Initial variance.")
    s0: float = Field(1.0, gt=0, description="Initial spot.")

    @model_validator(mode="after")
    def _chi_negative(self) -> "HestonParams":
        # chi(0) = -lambda < 0 holds by the field constraint
        if self.zeta * self.rho - self.lambda_ >= 0:
            raise ValueError(
                f"inadmissible model: chi(1) = zeta*rho - lambda = {self.zeta * self.rho - self.lambda_} must be < 0"
            )
        return self


class JumpParams(BaseModel):
    """Compound Poisson jumps in X with rate r and Neg-Exp(alpha) sizes."""

    model_config = ConfigDict(frozen=True)

    r: float = Field(..., gt=0, description="Jump intensity (1/time).")
    alpha: float = Field(..., gt=0, description="Rate of the exponential jump-size law.")

    @computed_field
    @property
    def delta(self) -> float:
        """Drift compensator that makes S = S0 exp(X) a martingale."""
        return self.r / (self.alpha + 1.0)


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    heston: HestonParams
    jumps: Optional[JumpParams] = Field(None, description="Present for the Heston model with jumps.")

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None


@dataclass(frozen=True)
class DomainJ:
    """Effective domain [u_minus, u_plus] of the limiting cumulant h."""

    u_minus: float
    u_plus: float

    def contains(self, u: float) -> bool:
        return self.u_minus <= u <= self.u_plus

    def interior(self, margin: float = 1e-9) -> Tuple[float, float]:
        """Bracket strictly inside J, shrunk by `margin` relative to the width."""
        width = self.u_plus - self.u_minus
        return self.u_minus + margin * width, self.u_plus - margin * width


def check_admissible(model: ModelSpec) -> None:
    """Raise when the closed forms cannot be used for `model`."""
    heston = model.heston
    if chi(model, 1.0) >= 0:
        raise UnsupportedParameterError(f"chi(1) = {chi(model, 1.0)} must be negative")
    if abs(heston.rho) >= 1.0:
        raise UnsupportedParameterError(f"|rho| = 1 is not supported (rho={heston.rho})")


## Generator functions ----------------------------------------------------------------
def chi(model: ModelSpec, u: float) -> float:
    heston = model.heston
    return heston.zeta * heston.rho * u - heston.lambda_


def kappa_tilde(jumps: JumpParams, u: float) -> float:
    """Compensated log-Laplace exponent of the jumps, r u (u-1) / ((alpha+1)(alpha+u))."""
    if u <= -jumps.alpha:
        raise DomainError(f"kappa_tilde undefined for u={u} <= -alpha={-jumps.alpha}")
    return jumps.r * u * (u - 1.0) / ((jumps.alpha + 1.0) * (jumps.alpha + u))


def kappa_tilde_prime(jumps: JumpParams, u: float) -> float:
    if u <= -jumps.alpha:
        raise DomainError(f"kappa_tilde undefined for u={u} <= -alpha={-jumps.alpha}")
    a = jumps.alpha
    return jumps.r / (a + 1.0) * (u * u + 2.0 * a * u - a) / (a + u) ** 2


def _jump_term(model: ModelSpec, u: float) -> float:
    return kappa_tilde(model.jumps, u) if model.jumps is not None else 0.0


def F_eval(model: ModelSpec, u: float, w: float) -> float:
    heston = model.heston
    return heston.lambda_ * heston.mu * w + _jump_term(model, u)


def R_eval(model: ModelSpec, u: float, w: float) -> float:
    h = model.heston
    return 0.5 * h.zeta**2 * w * w + h.zeta * h.rho * u * w - h.lambda_ * w + 0.5 * (u * u - u)


## Domain J ----------------------------------------------------------------
@lru_cache(maxsize=256)
def _radicand_roots(heston: HestonParams) -> Tuple[float, float]:
    """Roots of the gamma radicand, computed without cancellation."""
    if abs(heston.rho) >= 1.0:
        raise UnsupportedParameterError(f"|rho| = 1 is not supported (rho={heston.rho})")
    k = heston.lambda_ / heston.zeta
    one_minus_rho2 = 1.0 - heston.rho**2
    b = 0.5 - k * heston.rho
    s = math.sqrt(b * b + k * k * one_minus_rho2)
    # u_minus * u_plus = -k^2 / (1 - rho^2)
    if b >= 0:
        u_plus = (b + s) / one_minus_rho2
        u_minus = -k * k / (b + s)
    else:
        u_minus = (b - s) / one_minus_rho2
        u_plus = -k * k / (b - s)
    return u_minus, u_plus


def domain_J(model: ModelSpec) -> DomainJ:
    u_minus, u_plus = _radicand_roots(model.heston)
    if model.jumps is not None:
        u_minus = max(u_minus, -model.jumps.alpha + JUMP_POLE_GUARD)
    return DomainJ(u_minus=u_minus, u_plus=u_plus)


def _radicand(heston: HestonParams, u: float) -> float:
    if abs(heston.rho) < 1.0:
        u_minus, u_plus = _radicand_roots(heston)
        return (1.0 - heston.rho**2) * (u_plus - u) * (u - u_minus)
    k = heston.lambda_ / heston.zeta - heston.rho * u
    return k * k + 0.25 - (u - 0.5) ** 2


def gamma_fn(heston: HestonParams, u: float) -> float:
    radicand = _radicand(heston, u)
    if radicand < 0.0:
        if radicand < -RADICAND_DUST:
            raise DomainError(f"u={u} lies outside J (gamma radicand {radicand:.3e} < 0)")
        radicand = 0.0
    return heston.zeta * math.sqrt(radicand)


def _check_in_J(model: ModelSpec, u: float) -> float:
    g = gamma_fn(model.heston, u)
    if model.jumps is not None and u <= -model.jumps.alpha:
        raise DomainError(f"u={u} lies outside J (jump pole at {-model.jumps.alpha})")
    return g


## Equilibria and the limiting cumulant ----------------------------------------------------------------
def _stable_root(heston: HestonParams, u: float, g: float) -> float:
    # smaller root of R(u, .), rationalised when lambda - zeta rho u >= 0
    b = heston.lambda_ - heston.zeta * heston.rho * u
    if b >= 0:
        return (u * u - u) / (b + g)
    return (b - g) / heston.zeta**2


def stable_equilibrium(model: ModelSpec, u: float) -> float:
    """Attracting root w(u) of R(u, .) = 0, the t -> infinity limit of psi."""
    g = gamma_fn(model.heston, u)
    return _stable_root(model.heston, u, g)


def unstable_equilibrium(model: ModelSpec, u: float) -> float:
    """Repelling root w_tilde(u); the basin of attraction of w(u) is (-inf, w_tilde(u))."""
    heston = model.heston
    g = gamma_fn(heston, u)
    return (heston.lambda_ - heston.zeta * heston.rho * u + g) / heston.zeta**2


def _heston_cumulant(heston: HestonParams, u: float, g: float) -> float:
    return heston.lambda_ * heston.mu * _stable_root(heston, u, g)


def limiting_cumulant_h(model: ModelSpec, u: float) -> float:
    """h(u) = F(u, w(u)) = lim t^-1 log E[exp(u X_t)]."""
    g = _check_in_J(model, u)
    return _heston_cumulant(model.heston, u, g) + _jump_term(model, u)


def limiting_cumulant_h_prime(model: ModelSpec, u: float) -> float:
    """
    Analytic derivative of h.

    h is steep at the radicand roots: returns -inf at u_minus and +inf at u_plus.
    """
    heston = model.heston
    g = _check_in_J(model, u)
    jump_slope = kappa_tilde_prime(model.jumps, u) if model.jumps is not None else 0.0
    k = heston.lambda_ / heston.zeta
    if g == 0.0:
        u_minus, u_plus = _radicand_roots(heston)
        return -math.inf if abs(u - u_minus) <= abs(u - u_plus) else math.inf
    radicand_slope = -2.0 * heston.rho * (k - heston.rho * u) + 1.0 - 2.0 * u
    gamma_slope = heston.zeta**2 * radicand_slope / (2.0 * g)
    return -heston.mu * k * heston.rho - heston.mu * heston.lambda_ / heston.zeta**2 * gamma_slope + jump_slope


## Riccati solutions ----------------------------------------------------------------
# With a = zeta^2 (w - w(u)) / gamma = 1 - eta and e = exp(-gamma t):
#   psi = w(u) + (w - w(u)) 2e / (2 + a (e - 1))
#   phi = t h(u) - (2 lambda mu / zeta^2) log(1 + a (e - 1) / 2)
# which equals the tanh/cosh form and stays finite for large gamma t.
def blow_up_time(model: ModelSpec, u: float, w: float) -> Optional[float]:
    """Explosion time of psi(., u, w); None when w is in the basin of attraction."""
    heston = model.heston
    g = gamma_fn(heston, u)
    if g == 0.0:
        d = w - (heston.lambda_ - heston.zeta * heston.rho * u) / heston.zeta**2
        return 2.0 / (heston.zeta**2 * d) if d > 0 else None
    a = heston.zeta**2 * (w - _stable_root(heston, u, g)) / g
    if a <= 2.0:
        return None
    return -math.log1p(-2.0 / a) / g


def _blow_up(model: ModelSpec, t: float, u: float, w: float) -> BlowUpError:
    t_star = blow_up_time(model, u, w)
    return BlowUpError(
        f"Riccati solution explodes at t={t_star} <= {t} for u={u}, w={w} (w outside the basin)",
        blow_up_time=t_star,
    )


def riccati_psi(model: ModelSpec, t: float, u: float, w: float) -> float:
    heston = model.heston
    g = gamma_fn(heston, u)
    if t == 0.0:
        return w
    if g == 0.0:
        w_star = (heston.lambda_ - heston.zeta * heston.rho * u) / heston.zeta**2
        d = w - w_star
        denom = 1.0 - 0.5 * heston.zeta**2 * d * t
        if denom <= 0.0:
            raise _blow_up(model, t, u, w)
        return w_star + d / denom
    w_s = _stable_root(heston, u, g)
    a = heston.zeta**2 * (w - w_s) / g
    e = math.exp(-g * t)
    denom = 2.0 + a * math.expm1(-g * t)
    if denom <= 0.0:
        raise _blow_up(model, t, u, w)
    return w_s + (w - w_s) * 2.0 * e / denom


def riccati_phi(model: ModelSpec, t: float, u: float, w: float) -> float:
    heston = model.heston
    g = _check_in_J(model, u)
    if t == 0.0:
        return 0.0
    scale = 2.0 * heston.lambda_ * heston.mu / heston.zeta**2
    jump = t * _jump_term(model, u)
    if g == 0.0:
        w_star = (heston.lambda_ - heston.zeta * heston.rho * u) / heston.zeta**2
        d = w - w_star
        denom = 1.0 - 0.5 * heston.zeta**2 * d * t
        if denom <= 0.0:
            raise _blow_up(model, t, u, w)
        return heston.lambda_ * heston.mu * w_star * t - scale * math.log(denom) + jump
    w_s = _stable_root(heston, u, g)
    a = heston.zeta**2 * (w - w_s) / g
    half_shift = 0.5 * a * math.expm1(-g * t)
    if half_shift <= -1.0:
        raise _blow_up(model, t, u, w)
    return t * _heston_cumulant(heston, u, g) - scale * math.log1p(half_shift) + jump


def laplace_transform_log(model: ModelSpec, t: float, u: float, w: float, v0: Optional[float] = None) -> float:
    """log E[exp(u X_t + w V_t)] for X_0 = 0."""
    v0 = model.heston.v0 if v0 is None else v0
    return riccati_phi(model, t, u, w) + riccati_psi(model, t, u, w) * v0
