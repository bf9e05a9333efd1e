import math

import numpy as np
import pytest
from pydantic import ValidationError

from engine.errors import BlowUpError, DomainError, UnsupportedParameterError
from engine.model_core import (
    F_eval,
    HestonParams,
    JumpParams,
    ModelSpec,
    R_eval,
    blow_up_time,
    check_admissible,
    domain_J,
    gamma_fn,
    kappa_tilde,
    laplace_transform_log,
    limiting_cumulant_h,
    limiting_cumulant_h_prime,
    riccati_phi,
    riccati_psi,
    stable_equilibrium,
    unstable_equilibrium,
)


def _interior(model, count, margin=1e-3):
    lo, hi = domain_J(model).interior(margin)
    return np.linspace(lo, hi, count)


def _rk4(model, u, horizon, steps):
    """Integrate psi' = R(u, psi), phi' = F(u, psi) from (phi, psi) = (0, 0)."""
    dt = horizon / steps
    psi, phi = 0.0, 0.0
    for _ in range(steps):
        k1 = R_eval(model, u, psi)
        l1 = F_eval(model, u, psi)
        k2 = R_eval(model, u, psi + 0.5 * dt * k1)
        l2 = F_eval(model, u, psi + 0.5 * dt * k1)
        k3 = R_eval(model, u, psi + 0.5 * dt * k2)
        l3 = F_eval(model, u, psi + 0.5 * dt * k2)
        k4 = R_eval(model, u, psi + dt * k3)
        l4 = F_eval(model, u, psi + dt * k3)
        psi += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        phi += dt * (l1 + 2 * l2 + 2 * l3 + l4) / 6
    return psi, phi


## Parameters ----------------------------------------------------------------
def test_heston_params_accepts_lambda_alias():
    params = HestonParams.model_validate({"lambda": 1.15, "mu": 0.04, "zeta": 0.2, "rho": -0.4, "v0": 0.04})
    assert params.lambda_ == 1.15
    assert params.s0 == 1.0
    assert params.model_dump(by_alias=True)["lambda"] == 1.15


def test_heston_params_rejects_nonnegative_chi_at_one():
    with pytest.raises(ValidationError):
        HestonParams(lambda_=0.1, mu=0.04, zeta=1.0, rho=0.5, v0=0.04)


def test_jump_compensator():
    assert JumpParams(r=2.0, alpha=3.0).delta == pytest.approx(0.5)


def test_perfect_correlation_is_unsupported():
    model = ModelSpec(heston=HestonParams(lambda_=1.15, mu=0.04, zeta=0.2, rho=-1.0, v0=0.04))
    with pytest.raises(UnsupportedParameterError):
        check_admissible(model)


## Identities ----------------------------------------------------------------
def test_cumulant_vanishes_at_zero_and_one(model):
    assert abs(limiting_cumulant_h(model, 0.0)) <= 1e-12
    assert abs(limiting_cumulant_h(model, 1.0)) <= 1e-12


def test_gamma_at_zero_is_lambda(model):
    assert gamma_fn(model.heston, 0.0) == pytest.approx(model.heston.lambda_, abs=1e-12)


def test_martingale_transform_is_exactly_zero(model):
    for t in (0.25, 1.0, 3.0):
        assert laplace_transform_log(model, t, 1.0, 0.0) == 0.0


def test_riccati_initial_values_are_exact(model):
    for u in _interior(model, 20):
        for w in np.linspace(-1.0, 1.0, 20):
            assert riccati_psi(model, 0.0, u, w) == w
            assert riccati_phi(model, 0.0, u, w) == 0.0


def test_equilibria_are_roots_of_R(model):
    for u in _interior(model, 25):
        w_s = stable_equilibrium(model, u)
        w_u = unstable_equilibrium(model, u)
        assert w_s < w_u
        assert R_eval(model, u, w_s) == pytest.approx(0.0, abs=1e-10)
        assert R_eval(model, u, w_u) == pytest.approx(0.0, abs=1e-10)


def test_semiflow(model):
    times = np.linspace(0.0, 3.0, 10)
    worst = 0.0
    for u in _interior(model, 10):
        for t in times:
            for s in times:
                psi_s = riccati_psi(model, s, u, 0.0)
                worst = max(
                    worst,
                    abs(riccati_psi(model, t + s, u, 0.0) - riccati_psi(model, t, u, psi_s)),
                    abs(
                        riccati_phi(model, t + s, u, 0.0)
                        - riccati_phi(model, t, u, psi_s)
                        - riccati_phi(model, s, u, 0.0)
                    ),
                )
    assert worst < 1e-9


def test_closed_forms_match_rk4(model):
    for u in _interior(model, 25, margin=0.02):
        psi, phi = _rk4(model, u, 5.0, 4000)
        assert riccati_psi(model, 5.0, u, 0.0) == pytest.approx(psi, abs=1e-6)
        assert riccati_phi(model, 5.0, u, 0.0) == pytest.approx(phi, abs=1e-6)
    print("✅ closed forms agree with RK4")


def test_psi_is_continuous_at_the_double_root(heston_model):
    u_plus = domain_J(heston_model).u_plus
    at_root = riccati_psi(heston_model, 1.0, u_plus, 0.0)
    inside = riccati_psi(heston_model, 1.0, u_plus - 1e-10, 0.0)
    assert at_root == pytest.approx(inside, rel=1e-4)


def test_scaled_phi_approaches_cumulant(heston_model):
    u, eps, dt = -0.457, 1e-4, 1.5
    scaled = eps * riccati_phi(heston_model, dt / eps, u, 0.0) / dt
    assert scaled == pytest.approx(limiting_cumulant_h(heston_model, u), rel=1e-3)


## Cumulant shape ----------------------------------------------------------------
def test_cumulant_is_convex(model):
    d = 1e-3
    for u in _interior(model, 50, margin=1e-2):
        second = limiting_cumulant_h(model, u + d) - 2 * limiting_cumulant_h(model, u) + limiting_cumulant_h(model, u - d)
        assert second >= -1e-8


def test_cumulant_derivative_matches_central_difference(model):
    d = 1e-6
    for u in _interior(model, 30, margin=1e-2):
        numeric = (limiting_cumulant_h(model, u + d) - limiting_cumulant_h(model, u - d)) / (2 * d)
        assert limiting_cumulant_h_prime(model, u) == pytest.approx(numeric, rel=1e-6, abs=1e-6)


def test_uncorrelated_cumulant_is_flat_at_one_half():
    model = ModelSpec(heston=HestonParams(lambda_=1.15, mu=0.04, zeta=0.2, rho=0.0, v0=0.04))
    assert limiting_cumulant_h_prime(model, 0.5) == 0.0


def test_cumulant_is_steep_at_the_radicand_roots(heston_model):
    J = domain_J(heston_model)
    assert limiting_cumulant_h_prime(heston_model, J.u_minus) == -math.inf
    assert limiting_cumulant_h_prime(heston_model, J.u_plus) == math.inf
    assert math.isfinite(limiting_cumulant_h(heston_model, J.u_minus))
    assert math.isfinite(limiting_cumulant_h(heston_model, J.u_plus))


## Domain ----------------------------------------------------------------
def test_domain_of_presets(heston_model, jump_model):
    J = domain_J(heston_model)
    assert J.u_minus == pytest.approx(-3.771, abs=1e-3)
    assert J.u_plus == pytest.approx(10.44, abs=1e-2)
    assert J.contains(0.0) and J.contains(1.0)
    # the radicand root lies above the jump pole here
    assert domain_J(jump_model).u_minus > -jump_model.jumps.alpha


def test_outside_J_raises(model):
    J = domain_J(model)
    with pytest.raises(DomainError):
        gamma_fn(model.heston, J.u_plus + 1.0)
    with pytest.raises(DomainError):
        limiting_cumulant_h(model, J.u_plus + 1.0)


def test_jump_pole_raises(jump_model):
    with pytest.raises(DomainError):
        kappa_tilde(jump_model.jumps, -jump_model.jumps.alpha)


def test_jump_pole_clips_J():
    model = ModelSpec(
        heston=HestonParams(lambda_=1.15, mu=0.04, zeta=0.2, rho=-0.4, v0=0.04),
        jumps=JumpParams(r=1.0, alpha=1.0),
    )
    assert domain_J(model).u_minus == pytest.approx(-1.0, abs=1e-8)
    assert domain_J(model).u_minus > -1.0


## Blow-up ----------------------------------------------------------------
def test_psi_explodes_outside_the_basin(heston_model):
    u = 0.5
    w = unstable_equilibrium(heston_model, u) + 1.0
    t_star = blow_up_time(heston_model, u, w)
    assert t_star is not None and t_star > 0
    assert riccati_psi(heston_model, 0.5 * t_star, u, w) > w
    with pytest.raises(BlowUpError) as info:
        riccati_psi(heston_model, 2.0 * t_star, u, w)
    assert info.value.blow_up_time == pytest.approx(t_star)
    with pytest.raises(BlowUpError):
        riccati_phi(heston_model, 2.0 * t_star, u, w)


def test_unstable_equilibrium_is_fixed(heston_model):
    u = 0.5
    w = unstable_equilibrium(heston_model, u)
    assert riccati_psi(heston_model, 2.0, u, w) == pytest.approx(w, rel=1e-9)


def test_no_blow_up_inside_the_basin(model):
    for u in _interior(model, 10):
        assert blow_up_time(model, u, 0.0) is None
