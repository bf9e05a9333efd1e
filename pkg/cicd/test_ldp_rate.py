import itertools
import math

import numpy as np
import pytest
from scipy import optimize

from engine.engine_helpers import Finite, PositiveInfinity, is_finite
from engine.errors import DomainError
from engine.ldp_rate import (
    DiscretePath,
    Partition,
    SignedDiscreteMeasure,
    g_epsilon_limit,
    lambda_tau,
    legendre_h_star,
    rate_function_discrete,
    verify_scaling_limits,
)
from engine.model_core import domain_J, limiting_cumulant_h, limiting_cumulant_h_prime


## Partitions and measures ----------------------------------------------------------------
def test_uniform_partition_ends_at_maturity():
    partition = Partition.uniform(1.5, 3)
    assert partition.times[-1] == 1.5
    assert partition.n == 3
    assert sum(partition.increments) == pytest.approx(1.5)


@pytest.mark.parametrize("times", [(), (0.0, 1.0), (1.0, 0.5), (0.5, 0.5)])
def test_partition_rejects_bad_dates(times):
    with pytest.raises(ValueError):
        Partition(times)


def test_tail_masses():
    measure = SignedDiscreteMeasure(Partition.uniform(1.0, 3), (-0.1, -0.2, -0.3))
    assert measure.cumulative == pytest.approx((-0.6, -0.5, -0.3))
    assert measure.total_mass == pytest.approx(-0.6)
    rebuilt = SignedDiscreteMeasure.from_cumulative(measure.support, measure.cumulative)
    assert rebuilt.weights == pytest.approx(measure.weights)


def test_weight_count_must_match_dates():
    with pytest.raises(ValueError):
        SignedDiscreteMeasure(Partition.uniform(1.0, 3), (-0.1,))


def test_path_values_must_be_finite():
    with pytest.raises(ValueError):
        DiscretePath(Partition.uniform(1.0, 2), (0.1, math.nan))


## Lambda_tau and G_eps ----------------------------------------------------------------
def test_lambda_tau_of_zero_measure(model):
    value = lambda_tau(model, SignedDiscreteMeasure.zero(Partition.uniform(2.0, 4)))
    assert value == Finite(0.0)


def test_lambda_tau_martingale_atom(model):
    value = lambda_tau(model, SignedDiscreteMeasure(Partition((1.5,)), (1.0,)))
    assert is_finite(value)
    assert abs(float(value)) <= 1e-12


def test_lambda_tau_is_infinite_outside_J(model):
    J = domain_J(model)
    measure = SignedDiscreteMeasure(Partition((0.5, 1.0)), (J.u_minus - 1.0, 0.5))
    assert isinstance(lambda_tau(model, measure), PositiveInfinity)
    assert float(lambda_tau(model, measure)) == math.inf
    with pytest.raises(DomainError):
        g_epsilon_limit(model, measure)


def test_g_eps_matches_lambda_tau_on_feasible_measures(model):
    rng = np.random.default_rng(7)
    lo, hi = domain_J(model).interior(0.05)
    partition = Partition.uniform(1.5, 4)
    for _ in range(50):
        cumulative = rng.uniform(lo, hi, size=4)
        measure = SignedDiscreteMeasure.from_cumulative(partition, cumulative)
        if not measure.is_feasible(model):
            continue
        assert g_epsilon_limit(model, measure) == pytest.approx(float(lambda_tau(model, measure)), abs=1e-12)


def test_g_eps_sums_intervals(heston_model):
    partition = Partition.uniform(2.0, 4)
    measure = SignedDiscreteMeasure.from_cumulative(partition, (-0.4, -0.3, -0.2, -0.1))
    expected = sum(0.5 * limiting_cumulant_h(heston_model, c) for c in (-0.4, -0.3, -0.2, -0.1))
    assert g_epsilon_limit(heston_model, measure) == pytest.approx(expected, abs=1e-14)


## Legendre transform ----------------------------------------------------------------
def test_legendre_duality(model):
    lo, hi = domain_J(model).interior(1e-3)
    for theta in np.linspace(lo, hi, 25)[1:-1]:
        slope = limiting_cumulant_h_prime(model, theta)
        expected = theta * slope - limiting_cumulant_h(model, theta)
        assert legendre_h_star(model, slope) == pytest.approx(expected, abs=1e-9)


def test_h_star_vanishes_at_mean_slope(model):
    assert legendre_h_star(model, limiting_cumulant_h_prime(model, 0.0)) == pytest.approx(0.0, abs=1e-12)


def test_h_star_at_zero_is_minus_min_h(model):
    lo, hi = domain_J(model).interior(1e-6)
    best = optimize.minimize_scalar(
        lambda u: limiting_cumulant_h(model, u), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
    )
    value = legendre_h_star(model, 0.0)
    assert value >= 0.0
    assert value == pytest.approx(-best.fun, abs=1e-10)


def test_fenchel_young(model):
    lo, hi = domain_J(model).interior(1e-3)
    thetas = np.linspace(lo, hi, 100)
    ys = [limiting_cumulant_h_prime(model, t) for t in np.linspace(lo, hi, 100)[1:-1]]
    h_values = {t: limiting_cumulant_h(model, t) for t in thetas}
    h_star = [legendre_h_star(model, y) for y in ys]
    slack = min(hs + h_values[t] - t * y for (y, hs), t in itertools.product(zip(ys, h_star), thetas))
    assert slack >= -1e-12
    print(f"✅ Fenchel-Young slack over {len(ys) * len(thetas)} pairs: {slack:.3g}")


@pytest.mark.parametrize("side", [0, 1])
def test_h_star_beyond_interior_slopes_dominates_the_bracket(model, side):
    lo, hi = domain_J(model).interior()
    y = 2.0 * limiting_cumulant_h_prime(model, (lo, hi)[side])
    value = legendre_h_star(model, y)
    for theta in (lo, hi, *np.linspace(lo, hi, 50)):
        assert value >= theta * y - limiting_cumulant_h(model, theta)


def test_h_star_is_convex(model):
    lo, hi = domain_J(model).interior(1e-2)
    ys = np.linspace(limiting_cumulant_h_prime(model, lo), limiting_cumulant_h_prime(model, hi), 60)
    values = np.array([legendre_h_star(model, y) for y in ys])
    assert np.all(values[:-2] - 2 * values[1:-1] + values[2:] >= -1e-8)


## Discrete rate function ----------------------------------------------------------------
def test_rate_of_zero_path(model):
    partition = Partition.uniform(2.0, 5)
    path = DiscretePath(partition, (0.0,) * 5)
    assert rate_function_discrete(model, path) == pytest.approx(2.0 * legendre_h_star(model, 0.0), abs=1e-12)


def test_rate_of_single_date(model):
    theta_hat, T = -0.3, 1.5
    slope = limiting_cumulant_h_prime(model, theta_hat)
    path = DiscretePath(Partition((T,)), (T * slope,))
    expected = T * (theta_hat * slope - limiting_cumulant_h(model, theta_hat))
    assert rate_function_discrete(model, path) == pytest.approx(expected, abs=1e-9)


def _brute_force_rate(model, partition, values):
    """sup over Theta in J^n of sum_j Theta_j dx_j - dt_j h(Theta_j), without using separability."""
    dts = np.array(partition.increments)
    dxs = np.diff(np.concatenate([[0.0], values]))
    lo, hi = domain_J(model).interior(1e-6)

    def neg(Theta):
        return -(float(np.dot(Theta, dxs)) - sum(dt * limiting_cumulant_h(model, c) for dt, c in zip(dts, Theta)))

    def neg_grad(Theta):
        return -(dxs - np.array([dt * limiting_cumulant_h_prime(model, c) for dt, c in zip(dts, Theta)]))

    coarse = np.linspace(lo, hi, 15)
    start = min(itertools.product(coarse, repeat=len(dts)), key=lambda p: neg(np.array(p)))
    result = optimize.minimize(
        neg,
        np.array(start),
        jac=neg_grad,
        method="L-BFGS-B",
        bounds=[(lo, hi)] * len(dts),
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000},
    )
    return -result.fun


@pytest.mark.slow
def test_rate_function_matches_brute_force(model):
    rng = np.random.default_rng(11)
    partition = Partition((0.5, 1.2, 2.0))
    lo, hi = domain_J(model).interior(0.2)
    for _ in range(20):
        slopes = [limiting_cumulant_h_prime(model, t) for t in rng.uniform(lo, hi, size=3)]
        values = np.cumsum([dt * s for dt, s in zip(partition.increments, slopes)])
        path = DiscretePath(partition, tuple(values))
        assert rate_function_discrete(model, path) == pytest.approx(
            _brute_force_rate(model, partition, values), abs=1e-6
        )


## Scaling limits ----------------------------------------------------------------
def test_scaling_errors_shrink(model):
    report = verify_scaling_limits(model, [0.5, -0.3], [1e-1, 1e-2, 1e-3])
    frame = report.to_frame()
    assert list(frame.columns) == ["u", "eps", "psi_error", "phi_error"]
    assert len(frame) == 6
    assert report.monotone
    for _, group in frame.groupby("u"):
        coarse = group[group["eps"] == 1e-1].iloc[0]
        fine = group[group["eps"] == 1e-3].iloc[0]
        assert fine["phi_error"] < coarse["phi_error"]


def test_scaling_errors_vanish_at_zero(model):
    frame = verify_scaling_limits(model, [0.0], [1e-1, 1e-3]).to_frame()
    assert (frame["psi_error"] == 0.0).all()
    assert (frame["phi_error"] == 0.0).all()


def test_scaling_needs_decreasing_eps(model):
    with pytest.raises(ValueError):
        verify_scaling_limits(model, [0.5], [1e-3, 1e-1])
