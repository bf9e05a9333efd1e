"""
Euler paths of (X, V) under P and under the Esscher measure P_theta.

Both measures share one full-truncation kernel; only the per-step coefficients differ:
    dX = (delta + a_k V+) dt + sqrt(V+) dW1 (+ jumps)
    dV = (lambda mu - l_k V+) dt + zeta sqrt(V+) dW2
with a_k = -1/2, l_k = lambda under P and
    a_k = Theta_tau + zeta rho Psi_tau - 1/2,  l_k = lambda - zeta rho Theta_tau - zeta^2 Psi_tau
under P_theta, where tau is the next monitoring date after the step's left node.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from engine.errors import BlowUpError, ConfigurationError, DomainError, InfeasibleMeasureError
from engine.ldp_rate import SignedDiscreteMeasure
from engine.model_core import JumpParams, ModelSpec, riccati_phi, riccati_psi

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 2048

JumpLog = List[Tuple[float, float]]


# --- Grid, plan and path containers ---
@dataclass(frozen=True)
class PathGrid:
    maturity: float
    n_steps: int
    n_monitor: int = 1

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ConfigurationError(f"maturity must be positive, got {self.maturity}")
        if self.n_steps < self.n_monitor or self.n_steps % self.n_monitor != 0:
            raise ConfigurationError(
                f"n_steps={self.n_steps} must be a multiple of n_monitor={self.n_monitor} "
                "so that every monitoring date is a grid node"
            )

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def monitor_idx(self) -> np.ndarray:
        """Grid-node index of each monitoring date (node 0 is t = 0)."""
        stride = self.n_steps // self.n_monitor
        return np.arange(1, self.n_monitor + 1) * stride

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class EsscherPlan:
    """
    Psi/Phi recursion for a discrete measure.

    With A_n = B_n = 0 and, backwards over the dates,
        A_j = psi(t_{j+1} - t_j, Theta_{j+1}, A_{j+1})
        B_j = phi(t_{j+1} - t_j, Theta_{j+1}, A_{j+1}) + B_{j+1},
    the coefficients on (t_{j-1}, t_j] are Psi_j(s) = psi(s, Theta_j, A_j) and
    Phi_j(s) = phi(s, Theta_j, A_j) + B_j, with s the time left to t_j.
    """

    model: ModelSpec
    measure: SignedDiscreteMeasure
    anchors: Tuple[float, ...]
    phi_offsets: Tuple[float, ...]
    phi_at_zero: float
    psi_at_zero: float

    @property
    def cumulative(self) -> Tuple[float, ...]:
        return self.measure.cumulative

    @property
    def log_normaliser(self) -> float:
        """log E[exp(sum_j theta_j X_{t_j})] under P."""
        return self.phi_at_zero + self.psi_at_zero * self.model.heston.v0

    def psi(self, j: int, s: float) -> float:
        """Psi on the j-th interval (0-based), s time units before t_{j+1}."""
        return riccati_psi(self.model, s, self.cumulative[j], self.anchors[j])

    def step_coefficients(self, grid: PathGrid) -> Tuple[np.ndarray, np.ndarray]:
        """(Theta_tau, Psi(tau - t_k)) at the left node t_k of every Euler step."""
        times = self.measure.support.times
        nodes = grid.monitor_idx
        theta_step = np.empty(grid.n_steps)
        psi_step = np.empty(grid.n_steps)
        j = 0
        for k in range(grid.n_steps):
            # first monitoring node strictly after node k
            while nodes[j] <= k:
                j += 1
            theta_step[k] = self.cumulative[j]
            psi_step[k] = self.psi(j, max(times[j] - k * grid.dt, 0.0))
        return theta_step, psi_step

    def lambda_tilde(self, grid: PathGrid) -> np.ndarray:
        h = self.model.heston
        theta_step, psi_step = self.step_coefficients(grid)
        return h.lambda_ - h.zeta * h.rho * theta_step - h.zeta**2 * psi_step

    def mu_tilde(self, grid: PathGrid) -> np.ndarray:
        """lambda mu / lambda_tilde; presentation only, the kernel never divides."""
        h = self.model.heston
        with np.errstate(divide="ignore"):
            return h.lambda_ * h.mu / self.lambda_tilde(grid)


@dataclass
class Path:
    x: np.ndarray
    v: np.ndarray
    x_monitor: np.ndarray
    jump_log: Optional[JumpLog] = None


@dataclass
class PathBatch:
    """N paths: monitored log-prices (N, n_monitor), terminal variance and optional full grids."""

    x_monitor: np.ndarray
    v_terminal: np.ndarray
    x: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    jump_counts: Optional[np.ndarray] = None
    jump_logs: Optional[List[JumpLog]] = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.x_monitor.shape[0]

    def path(self, i: int) -> Path:
        if self.x is None or self.v is None:
            raise ConfigurationError("full grids were not kept for this batch (keep_grid=False)")
        return Path(
            x=self.x[i],
            v=self.v[i],
            x_monitor=self.x_monitor[i],
            jump_log=None if self.jump_logs is None else self.jump_logs[i],
        )


## Plan ----------------------------------------------------------------
def build_plan(model: ModelSpec, measure: SignedDiscreteMeasure, grid: Optional[PathGrid] = None) -> EsscherPlan:
    """
    Raises:
        InfeasibleMeasureError: a tail mass leaves J or psi explodes inside an interval.
        ConfigurationError: jumps combined with more than one date, or a grid that misses a date.
    """
    if model.has_jumps and measure.support.n > 1:
        raise ConfigurationError("jump models support Esscher measures on {T} only")
    if grid is not None and not np.allclose(grid.times[grid.monitor_idx], measure.support.times, rtol=0, atol=1e-12):
        raise ConfigurationError("monitoring dates of the measure are not grid nodes")
    if not measure.is_feasible(model):
        raise InfeasibleMeasureError(f"tail masses {measure.cumulative} leave J")
    if model.jumps is not None and model.jumps.alpha + measure.cumulative[0] <= 0.0:
        raise InfeasibleMeasureError(f"alpha + theta = {model.jumps.alpha + measure.cumulative[0]} must be positive")

    n = measure.support.n
    times = measure.support.times
    cumulative = measure.cumulative
    anchors = [0.0] * n
    offsets = [0.0] * n
    try:
        for j in range(n - 2, -1, -1):
            span = times[j + 1] - times[j]
            anchors[j] = riccati_psi(model, span, cumulative[j + 1], anchors[j + 1])
            offsets[j] = riccati_phi(model, span, cumulative[j + 1], anchors[j + 1]) + offsets[j + 1]
        psi0 = riccati_psi(model, times[0], cumulative[0], anchors[0])
        phi0 = riccati_phi(model, times[0], cumulative[0], anchors[0]) + offsets[0]
    except BlowUpError as e:
        raise InfeasibleMeasureError(f"Psi recursion explodes: {e}") from e
    except DomainError as e:
        raise InfeasibleMeasureError(str(e)) from e

    plan = EsscherPlan(
        model=model,
        measure=measure,
        anchors=tuple(anchors),
        phi_offsets=tuple(offsets),
        phi_at_zero=phi0,
        psi_at_zero=psi0,
    )
    if grid is not None:
        negative = int(np.sum(plan.lambda_tilde(grid) <= 0.0))
        if negative:
            logger.warning("lambda_tilde <= 0 on %d of %d Euler steps", negative, grid.n_steps)
    return plan


## Random streams ----------------------------------------------------------------
def path_generator(seed: int, stream: int, index: int) -> np.random.Generator:
    """Counter-based substream of path `index`; independent of how paths are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def sample_jumps(params: JumpParams, theta: float, T: float, rng: np.random.Generator) -> JumpLog:
    """
    Compound Poisson jumps on [0, T] under P_theta: rate r alpha / (alpha + theta),
    sizes -Exp(alpha + theta). theta = 0 gives the law under P.
    """
    tilted = params.alpha + theta
    if tilted <= 0.0:
        raise DomainError(f"alpha + theta = {tilted} must be positive")
    # r / (1 + theta/alpha) == r exactly at theta = 0
    rate = params.r / (1.0 + theta / params.alpha)
    count = rng.poisson(rate * T)
    times = rng.uniform(0.0, T, size=count)
    sizes = -rng.exponential(1.0 / tilted, size=count)
    order = np.argsort(times, kind="stable")
    return [(float(times[i]), float(sizes[i])) for i in order]


def _draw_path_noise(
    model: ModelSpec, grid: PathGrid, jump_theta: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, Optional[JumpLog]]:
    normals = rng.standard_normal((grid.n_steps, 2))
    jumps = np.zeros(grid.n_steps)
    log = None
    if model.jumps is not None:
        log = sample_jumps(model.jumps, jump_theta, grid.maturity, rng)
        for t, size in log:
            # added at the first grid node after the jump time
            node = min(int(math.floor(t / grid.dt)) + 1, grid.n_steps)
            jumps[node - 1] += size
    return normals, jumps, log


## Euler kernel ----------------------------------------------------------------
def _euler(
    model: ModelSpec,
    grid: PathGrid,
    drift_v: np.ndarray,
    decay: np.ndarray,
    normals: np.ndarray,
    jumps: np.ndarray,
    keep_grid: bool,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    h = model.heston
    n_paths = normals.shape[0]
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)
    rho_bar = math.sqrt(1.0 - h.rho**2)
    delta = model.jumps.delta if model.jumps is not None else 0.0
    level = h.lambda_ * h.mu

    x = np.zeros(n_paths)
    v = np.full(n_paths, h.v0)
    x_grid = v_grid = None
    if keep_grid:
        x_grid = np.zeros((n_paths, grid.n_steps + 1))
        v_grid = np.zeros((n_paths, grid.n_steps + 1))
        v_grid[:, 0] = h.v0
    monitor = np.zeros((n_paths, grid.n_monitor))
    monitor_at = {int(node): j for j, node in enumerate(grid.monitor_idx)}

    for k in range(grid.n_steps):
        v_plus = np.maximum(v, 0.0)
        vol = np.sqrt(v_plus)
        z1 = normals[:, k, 0]
        z2 = normals[:, k, 1]
        dw1 = sqrt_dt * z1
        dw2 = sqrt_dt * (h.rho * z1 + rho_bar * z2)
        x = x + (delta + drift_v[k] * v_plus) * dt + vol * dw1 + jumps[:, k]
        v = v + (level - decay[k] * v_plus) * dt + h.zeta * vol * dw2
        if keep_grid:
            x_grid[:, k + 1] = x
            v_grid[:, k + 1] = np.maximum(v, 0.0)
        j = monitor_at.get(k + 1)
        if j is not None:
            monitor[:, j] = x
    return monitor, np.maximum(v, 0.0), x_grid, v_grid


def _coefficients(model: ModelSpec, grid: PathGrid, plan: Optional[EsscherPlan]) -> Tuple[np.ndarray, np.ndarray]:
    h = model.heston
    if plan is None:
        return np.full(grid.n_steps, -0.5), np.full(grid.n_steps, h.lambda_)
    theta_step, psi_step = plan.step_coefficients(grid)
    drift_v = theta_step + h.zeta * h.rho * psi_step - 0.5
    decay = h.lambda_ - h.zeta * h.rho * theta_step - h.zeta**2 * psi_step
    return drift_v, decay


def _jump_theta(plan: Optional[EsscherPlan]) -> float:
    return 0.0 if plan is None else plan.cumulative[0]


def _simulate_chunk(
    model: ModelSpec,
    grid: PathGrid,
    plan: Optional[EsscherPlan],
    coefficients: Tuple[np.ndarray, np.ndarray],
    seed: int,
    stream: int,
    start: int,
    stop: int,
    keep_grid: bool,
) -> PathBatch:
    draws = [_draw_path_noise(model, grid, _jump_theta(plan), path_generator(seed, stream, i)) for i in range(start, stop)]
    normals = np.stack([d[0] for d in draws])
    jumps = np.stack([d[1] for d in draws])
    logs = [d[2] for d in draws] if model.has_jumps else None
    monitor, v_terminal, x_grid, v_grid = _euler(model, grid, *coefficients, normals, jumps, keep_grid)
    return PathBatch(
        x_monitor=monitor,
        v_terminal=v_terminal,
        x=x_grid,
        v=v_grid,
        jump_counts=None if logs is None else np.array([len(log) for log in logs]),
        jump_logs=logs if keep_grid else None,
    )


def _concat(chunks: List[PathBatch], keep_grid: bool) -> PathBatch:
    def cat(name: str):
        parts = [getattr(c, name) for c in chunks]
        return None if parts[0] is None else np.concatenate(parts)

    logs = None
    if keep_grid and chunks[0].jump_logs is not None:
        logs = [log for c in chunks for log in c.jump_logs]
    return PathBatch(
        x_monitor=cat("x_monitor"),
        v_terminal=cat("v_terminal"),
        x=cat("x"),
        v=cat("v"),
        jump_counts=cat("jump_counts"),
        jump_logs=logs,
    )


def simulate_batch(
    model: ModelSpec,
    grid: PathGrid,
    n_paths: int,
    seed: int,
    stream: int = 0,
    plan: Optional[EsscherPlan] = None,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    keep_grid: bool = False,
) -> PathBatch:
    """
    Simulate `n_paths` paths under P (plan=None) or P_theta.

    Path i always consumes substream (stream, i) and chunks are reassembled in path order,
    so the result does not depend on `workers`.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if plan is not None and plan.measure.support.n != grid.n_monitor:
        raise ConfigurationError(
            f"plan has {plan.measure.support.n} dates but the grid monitors {grid.n_monitor}"
        )
    coefficients = _coefficients(model, grid, plan)
    bounds = [(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]

    def run(bound: Tuple[int, int]) -> PathBatch:
        return _simulate_chunk(model, grid, plan, coefficients, seed, stream, bound[0], bound[1], keep_grid)

    if workers <= 1 or len(bounds) == 1:
        chunks = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, bounds))
    return _concat(chunks, keep_grid)


def simulate_p(model: ModelSpec, grid: PathGrid, rng: np.random.Generator) -> Path:
    """One Euler path under P."""
    return _single_path(model, grid, None, rng)


def simulate_p_theta(model: ModelSpec, plan: EsscherPlan, grid: PathGrid, rng: np.random.Generator) -> Path:
    """One Euler path under P_theta; a plan with theta = 0 reproduces `simulate_p` on the same stream."""
    return _single_path(model, grid, plan, rng)


def _single_path(model: ModelSpec, grid: PathGrid, plan: Optional[EsscherPlan], rng: np.random.Generator) -> Path:
    normals, jumps, log = _draw_path_noise(model, grid, _jump_theta(plan), rng)
    coefficients = _coefficients(model, grid, plan)
    monitor, _, x_grid, v_grid = _euler(model, grid, *coefficients, normals[None], jumps[None], keep_grid=True)
    return Path(x=x_grid[0], v=v_grid[0], x_monitor=monitor[0], jump_log=log)
