from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
from scipy import optimize

from engine.errors import SolverFailure


## Extended reals ----------------------------------------------------------------
@dataclass(frozen=True)
class Finite:
    value: float

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class PositiveInfinity:
    def __float__(self) -> float:
        return float("inf")


ExtendedReal = Union[Finite, PositiveInfinity]


def is_finite(value: ExtendedReal) -> bool:
    return isinstance(value, Finite)


## Dichotomy ----------------------------------------------------------------
RESIDUAL_TOL = 1e-10
MAX_BISECTION_ITER = 200
# smallest relative tolerance scipy's bisect accepts
_RTOL = 4 * np.finfo(float).eps


def bracketed_root(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    residual_tol: float = RESIDUAL_TOL,
    max_iter: int = MAX_BISECTION_ITER,
    what: str = "root",
) -> Tuple[float, int, float]:
    """
    Bisect `fn` on [lo, hi] and check the residual at the returned point.

    Args:
        fn: continuous function with a sign change on the bracket.
        lo, hi: bracket end points.
        residual_tol: largest accepted |fn(root)|.
        max_iter: bisection budget.
        what: label used in failure diagnostics.

    Returns:
        (root, iterations, residual)

    Raises:
        SolverFailure: no sign change, no convergence or residual above tolerance.
    """
    f_lo, f_hi = fn(lo), fn(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise SolverFailure(
            f"no sign change while bracketing the {what}",
            {"lo": lo, "hi": hi, "f_lo": f_lo, "f_hi": f_hi},
        )
    root, info = optimize.bisect(
        fn, lo, hi, xtol=1e-300, rtol=_RTOL, maxiter=max_iter, full_output=True, disp=False
    )
    residual = abs(fn(root))
    if residual > residual_tol:
        raise SolverFailure(
            f"{what} residual above tolerance",
            {"root": root, "residual": residual, "iterations": info.iterations, "converged": info.converged},
        )
    return float(root), int(info.iterations), float(residual)
