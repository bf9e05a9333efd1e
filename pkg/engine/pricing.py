"""
Plain and importance-sampled Monte Carlo estimators of put prices, and the comparison and
theta-sweep experiments built on them. The discount rate is zero throughout.
"""

import logging
import math
import time
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field

from engine.errors import ConfigurationError, EsscherError
from engine.esscher_opt import OptimalMeasure, PayoffSpec, solve_optimal_measure
from engine.ldp_rate import SignedDiscreteMeasure
from engine.model_core import ModelSpec
from engine.simulate import DEFAULT_CHUNK_SIZE, EsscherPlan, Path, PathBatch, PathGrid, build_plan, simulate_batch

logger = logging.getLogger(__name__)

PLAIN_STREAM = 0
IMPORTANCE_STREAM = 1


# --- Result models ---
class EstimatorResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    price: float = Field(..., description="Sample mean of the per-path estimator terms.")
    std_error: float = Field(..., ge=0, description="sqrt(variance / n_paths).")
    variance: float = Field(..., ge=0, description="Sample variance (ddof=1) of the per-path terms.")
    n_paths: int = Field(..., ge=2)
    elapsed: float = Field(..., ge=0, description="Wall-clock seconds for simulation and aggregation.")
    estimator_kind: Literal["plain", "importance"]
    solver_time: float = Field(0.0, ge=0, description="Seconds spent finding the Esscher measure.")
    thetas: Optional[List[float]] = Field(None, description="Esscher weights theta_j used, if any.")


class ComparisonRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    K: float
    T: float
    price: float = Field(..., description="Importance-sampling price.")
    std_error: float
    var_ratio: float = Field(..., description="Plain variance / importance-sampling variance.")
    adj_ratio: float = Field(..., description="var_ratio divided by the simulation-time ratio.")
    time_s: float = Field(..., description="Importance-sampling wall-clock seconds.")
    plain_price: float
    plain_std_error: float
    solver_time: float
    thetas: List[float]
    solver_residual: float


class SweepPoint(BaseModel):
    theta: float
    variance: float = Field(..., description="Empirical variance of the per-path estimator terms; nan if skipped.")
    feasible: bool = True


## Payoffs ----------------------------------------------------------------
PathLike = Union[Path, PathBatch]


def payoff_european_put(path: PathLike, K: float, S0: float) -> Union[float, np.ndarray]:
    """(K - S0 exp(X_T))+ for one path or a batch."""
    values = np.maximum(K - S0 * np.exp(path.x_monitor[..., -1]), 0.0)
    return float(values) if np.ndim(values) == 0 else values


def payoff_asian_put(path: PathLike, K: float, S0: float) -> Union[float, np.ndarray]:
    """(K - S0/n sum_j exp(X_{t_j}))+ over the monitoring dates."""
    average = S0 * np.mean(np.exp(path.x_monitor), axis=-1)
    values = np.maximum(K - average, 0.0)
    return float(values) if np.ndim(values) == 0 else values


def _payoff_values(payoff: PayoffSpec, batch: PathBatch, s0: float) -> np.ndarray:
    if payoff.kind == "european_put":
        return payoff_european_put(batch, payoff.strike, s0)
    return payoff_asian_put(batch, payoff.strike, s0)


def _summarise(terms: np.ndarray, elapsed: float, kind: str, **extra) -> EstimatorResult:
    n = terms.shape[0]
    variance = float(np.var(terms, ddof=1))
    return EstimatorResult(
        price=float(np.mean(terms)),
        std_error=math.sqrt(variance / n),
        variance=variance,
        n_paths=n,
        elapsed=elapsed,
        estimator_kind=kind,
        **extra,
    )


## Estimators ----------------------------------------------------------------
def mc_price_plain(
    model: ModelSpec,
    payoff: PayoffSpec,
    grid: PathGrid,
    n_paths: int,
    seed: int,
    stream: int = PLAIN_STREAM,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> EstimatorResult:
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    start = time.perf_counter()
    batch = simulate_batch(model, grid, n_paths, seed, stream=stream, workers=workers, chunk_size=chunk_size)
    terms = _payoff_values(payoff, batch, model.heston.s0)
    return _summarise(terms, time.perf_counter() - start, "plain")


def importance_weights(plan: EsscherPlan, batch: PathBatch) -> np.ndarray:
    """dP/dP_theta = exp(log normaliser - sum_j theta_j X_{t_j})."""
    thetas = np.asarray(plan.measure.weights)
    return np.exp(plan.log_normaliser - batch.x_monitor @ thetas)


def mc_price_is(
    model: ModelSpec,
    payoff: PayoffSpec,
    plan: EsscherPlan,
    grid: PathGrid,
    n_paths: int,
    seed: int,
    stream: int = PLAIN_STREAM,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    solver_time: float = 0.0,
) -> EstimatorResult:
    """
    Raises:
        ConfigurationError: the plan's dates differ from the payoff's monitoring dates.
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    if not np.allclose(plan.measure.support.times, payoff.partition.times, rtol=0, atol=1e-12):
        raise ConfigurationError(
            f"plan dates {plan.measure.support.times[:3]}... do not match the payoff's {payoff.n_monitor} dates"
        )
    start = time.perf_counter()
    batch = simulate_batch(
        model, grid, n_paths, seed, stream=stream, plan=plan, workers=workers, chunk_size=chunk_size
    )
    weights = importance_weights(plan, batch)
    terms = weights * _payoff_values(payoff, batch, model.heston.s0)
    elapsed = time.perf_counter() - start
    if not np.all(np.isfinite(weights) & (weights > 0.0)):
        logger.warning("non-positive or non-finite likelihood weights in %d paths", int(np.sum(~(weights > 0.0))))
    return _summarise(terms, elapsed, "importance", solver_time=solver_time, thetas=list(plan.measure.weights))


## Experiments ----------------------------------------------------------------
def _solve_timed(model: ModelSpec, payoff: PayoffSpec) -> Tuple[OptimalMeasure, float]:
    start = time.perf_counter()
    optimum = solve_optimal_measure(model, payoff)
    return optimum, time.perf_counter() - start


@traceable(name="compare_estimators")
def compare(
    model: ModelSpec,
    payoff: PayoffSpec,
    n_paths: int,
    seed: int,
    n_steps: int = 200,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> ComparisonRow:
    """Plain vs importance sampling on independent streams of the same seed."""
    optimum, solver_time = _solve_timed(model, payoff)
    grid = PathGrid(payoff.maturity, n_steps, payoff.n_monitor)
    plan = build_plan(model, optimum.measure, grid)
    plain = mc_price_plain(model, payoff, grid, n_paths, seed, PLAIN_STREAM, workers, chunk_size)
    tilted = mc_price_is(
        model, payoff, plan, grid, n_paths, seed, IMPORTANCE_STREAM, workers, chunk_size, solver_time=solver_time
    )
    var_ratio = plain.variance / tilted.variance if tilted.variance > 0 else math.inf
    time_ratio = tilted.elapsed / plain.elapsed if plain.elapsed > 0 else 1.0
    logger.info(
        "K=%s T=%s: plain %.4g (se %.2g), IS %.4g (se %.2g), ratio %.3g",
        payoff.strike,
        payoff.maturity,
        plain.price,
        plain.std_error,
        tilted.price,
        tilted.std_error,
        var_ratio,
    )
    return ComparisonRow(
        K=payoff.strike,
        T=payoff.maturity,
        price=tilted.price,
        std_error=tilted.std_error,
        var_ratio=var_ratio,
        adj_ratio=var_ratio / time_ratio,
        time_s=tilted.elapsed,
        plain_price=plain.price,
        plain_std_error=plain.std_error,
        solver_time=solver_time,
        thetas=list(optimum.thetas),
        solver_residual=optimum.residual,
    )


@traceable(name="theta_sweep")
def theta_sweep(
    model: ModelSpec,
    payoff: PayoffSpec,
    theta_grid: Sequence[float],
    n_paths: int,
    seed: int,
    n_steps: int = 200,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> List[SweepPoint]:
    """
    Empirical variance of the importance-sampling estimator with a single atom theta at T.
    Every grid point reuses the same substreams; infeasible points are kept with feasible=False.
    """
    if not payoff.is_european:
        raise ConfigurationError("theta sweeps use a single atom at T (European payoffs)")
    grid = PathGrid(payoff.maturity, n_steps, 1)
    points: List[SweepPoint] = []
    for theta in theta_grid:
        measure = SignedDiscreteMeasure(payoff.partition, (float(theta),))
        try:
            plan = build_plan(model, measure, grid)
        except EsscherError as e:
            logger.warning("skipping theta=%s: %s", theta, e)
            points.append(SweepPoint(theta=float(theta), variance=math.nan, feasible=False))
            continue
        result = mc_price_is(model, payoff, plan, grid, n_paths, seed, IMPORTANCE_STREAM, workers, chunk_size)
        points.append(SweepPoint(theta=float(theta), variance=result.variance))
    return points
