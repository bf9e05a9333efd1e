#!/usr/bin/env python3
"""
Numerical self-checks of the engine.
Runs analytic identities, solver postconditions and a small Monte Carlo martingale test for each
parameter preset, compares them with thresholds and writes a markdown report.
"""

import math
import operator
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from cicd.settings import ExperimentConfig, load_manifest
from engine.errors import EsscherError
from engine.esscher_opt import PayoffSpec, asian_stationarity_residuals, objective_european_derivative, solve_optimal_measure
from engine.ldp_rate import legendre_h_star, verify_scaling_limits
from engine.model_core import (
    ModelSpec,
    domain_J,
    gamma_fn,
    limiting_cumulant_h,
    limiting_cumulant_h_prime,
    riccati_phi,
    riccati_psi,
)
from engine.simulate import PathGrid, simulate_batch

Cumulant = Callable[[ModelSpec, float], float]

# Comparison operators for criteria such as "<1e-9"; longest symbol first
COMPARISONS = [
    (">=", operator.ge),
    ("<=", operator.le),
    ("==", operator.eq),
    ("!=", operator.ne),
    (">", operator.gt),
    ("<", operator.lt),
]

# European theta* for the jump preset at K=1, T=1.5
JUMP_THETA_STAR = -0.312

Predicate = Callable[[float], bool]


def parse_threshold(criterion: str) -> Predicate:
    """
    Turn a criterion into a predicate on the measured value.

    Accepts a comparison ("<1e-9", ">=-1e-12", "==1") or a band "target±tol",
    which passes when |value - target| <= tol. NaN never passes.
    """
    text = criterion.replace(" ", "")
    if "±" in text:
        target, tol = (float(part) for part in text.split("±"))
        return lambda value: not math.isnan(value) and abs(value - target) <= tol
    for symbol, compare in COMPARISONS:
        if text.startswith(symbol):
            limit = float(text[len(symbol):])
            return lambda value: not math.isnan(value) and compare(value, limit)
    raise ValueError(f"Invalid threshold format: {criterion}")


def format_score(value: Optional[float]) -> str:
    if value is None:
        return "N/A"
    return f"{value:.3g}"


## Checks ----------------------------------------------------------------
def _interior_grid(model: ModelSpec, count: int) -> np.ndarray:
    lo, hi = domain_J(model).interior(1e-3)
    return np.linspace(lo, hi, count)


def _identity_checks(model: ModelSpec) -> Dict[str, float]:
    h = model.heston
    u_grid = _interior_grid(model, 10)
    t_grid = np.linspace(0.0, 3.0, 10)
    semiflow = 0.0
    for u in u_grid:
        for t in t_grid:
            for s in t_grid:
                try:
                    psi_s = riccati_psi(model, s, u, 0.0)
                    lhs_psi = riccati_psi(model, t + s, u, 0.0)
                    rhs_psi = riccati_psi(model, t, u, psi_s)
                    lhs_phi = riccati_phi(model, t + s, u, 0.0)
                    rhs_phi = riccati_phi(model, t, u, psi_s) + riccati_phi(model, s, u, 0.0)
                except EsscherError:
                    continue
                semiflow = max(semiflow, abs(lhs_psi - rhs_psi), abs(lhs_phi - rhs_phi))
    report = verify_scaling_limits(model, [float(u) for u in _interior_grid(model, 10)], [1e-1, 1e-2, 1e-3])
    frame = report.to_frame()
    finest = frame[frame["eps"] == 1e-3]
    scale = np.array([abs(limiting_cumulant_h(model, u)) for u in finest["u"]]) + 1e-6
    return {
        "h(0)": abs(limiting_cumulant_h(model, 0.0)),
        "h(1)": abs(limiting_cumulant_h(model, 1.0)),
        "gamma(0)-lambda": abs(gamma_fn(h, 0.0) - h.lambda_),
        "psi(0,u,w)-w": max(abs(riccati_psi(model, 0.0, u, 0.01) - 0.01) for u in u_grid),
        "semiflow": semiflow,
        "scaling_relative_error": float(np.max(finest["phi_error"].to_numpy() / scale)),
        "scaling_monotone": 1.0 if report.monotone else 0.0,
    }


def _duality_checks(model: ModelSpec, cumulant: Cumulant, seed: int) -> Dict[str, float]:
    worst = 0.0
    for theta in _interior_grid(model, 15)[1:-1]:
        slope = limiting_cumulant_h_prime(model, theta)
        worst = max(worst, abs(legendre_h_star(model, slope) - (theta * slope - cumulant(model, theta))))
    rng = np.random.default_rng(seed)
    lo, hi = domain_J(model).interior(1e-3)
    slack = math.inf
    for theta, y in zip(rng.uniform(lo, hi, 200), rng.normal(0.0, 1.0, 200)):
        slack = min(slack, legendre_h_star(model, y) + cumulant(model, theta) - theta * y)
    return {"legendre_duality": worst, "fenchel_young_slack": slack}


def _solver_checks(model: ModelSpec) -> Dict[str, float]:
    european = PayoffSpec(kind="european_put", strike=1.0, maturity=1.5)
    optimum = solve_optimal_measure(model, european)
    out = {
        "theta_star": optimum.thetas[0],
        "european_residual": abs(objective_european_derivative(model, european, optimum.thetas[0])),
    }
    if not model.has_jumps:
        asian = PayoffSpec(kind="asian_put", strike=1.0, maturity=1.5, n_monitor=4)
        chain = solve_optimal_measure(model, asian).cumulative
        out["asian_stationarity"] = float(np.max(np.abs(asian_stationarity_residuals(model, asian, chain))))
    return out


def _martingale_check(model: ModelSpec, seed: int, n_paths: int) -> float:
    """|mean(S_T) - S0| in standard errors; under P."""
    grid = PathGrid(1.0, 50)
    batch = simulate_batch(model, grid, n_paths, seed)
    spot = model.heston.s0 * np.exp(batch.x_monitor[:, -1])
    return abs(spot.mean() - model.heston.s0) / (spot.std(ddof=1) / math.sqrt(n_paths))


def _criteria(model: ModelSpec) -> Dict[str, str]:
    criteria = {
        "admissible": "==1",
        "h(0)": "<=1e-12",
        "h(1)": "<=1e-12",
        "gamma(0)-lambda": "<=1e-12",
        "psi(0,u,w)-w": "==0",
        "semiflow": "<1e-9",
        "scaling_relative_error": "<0.01",
        "scaling_monotone": "==1",
        "legendre_duality": "<1e-8",
        "fenchel_young_slack": ">=-1e-12",
        "european_residual": "<1e-10",
        "asian_stationarity": "<1e-8",
        "martingale_z": "<4",
    }
    if model.has_jumps:
        criteria["theta_star"] = f"{JUMP_THETA_STAR}±0.005"
    return criteria


def check_preset(
    name: str,
    preset: Dict[str, Any],
    overrides: Optional[Dict[str, Any]] = None,
    cumulant: Optional[Cumulant] = None,
    seed: int = 42,
    n_paths: int = 4000,
) -> Dict[str, Any]:
    """Run every check for one preset and score it against the thresholds."""
    print(f"🔍 Checking preset: {name}")
    start = time.perf_counter()
    values: Dict[str, float] = {}
    try:
        config = ExperimentConfig.from_dict(
            {"model": preset, "payoff": {"kind": "european_put", "strike": 1.0, "maturity": 1.5}}, overrides
        )
    except ValidationError as e:
        print(f"❌ Preset {name} rejected: {e.errors()[0]['msg']}")
        criteria = {"admissible": "==1"}
        values["admissible"] = 0.0
        return _score(name, values, criteria)
    model = config.model
    values["admissible"] = 1.0
    try:
        values.update(_identity_checks(model))
        values.update(_duality_checks(model, cumulant or limiting_cumulant_h, seed))
        values.update(_solver_checks(model))
        values["martingale_z"] = _martingale_check(model, seed, n_paths)
    except EsscherError as e:
        print(f"❌ Error while checking {name}: {e}")
        return {"experiment_name": name, "error": str(e)}
    scored = _score(name, values, _criteria(model))
    scored["elapsed_s"] = time.perf_counter() - start
    return scored


def _score(name: str, values: Dict[str, float], criteria: Dict[str, str]) -> Dict[str, Any]:
    table_rows: List[Tuple[str, str, str, str]] = []
    num_passed = 0
    num_failed = 0
    for key, value in values.items():
        threshold_expr = criteria.get(key)
        passed = "N/A"
        check = "–"
        if threshold_expr:
            result = parse_threshold(threshold_expr)(value)
            passed = "✅" if result else "❌"
            check = threshold_expr
            if result:
                num_passed += 1
            else:
                num_failed += 1
        table_rows.append((key, format_score(value), check, passed))
    return {
        "experiment_name": name,
        "table_rows": table_rows,
        "num_passed": num_passed,
        "num_failed": num_failed,
        "total": num_passed + num_failed,
    }


def write_markdown_report(
    results: List[Dict[str, Any]], output_file: str = "validation_report.md", seed: int = 42, n_paths: int = 4000
):
    print(f"📝 Writing report to {output_file}")
    lines = ["# 🧪 Engine Validation Results", "", f"seed {seed}, {n_paths} Monte Carlo paths per martingale check", ""]
    failed_presets = 0
    for result in results:
        name = result.get("experiment_name", "Unknown")
        if "error" in result:
            failed_presets += 1
            lines += [f"### ❌ {name}", "", f"**Error:** {result['error']}", ""]
            continue
        lines += [f"### 📊 {name}", "", "| Check | Value | Criterion | Pass? |", "|-------|-------|-----------|-------|"]
        lines += [f"| {key} | {value} | {criterion} | {mark} |" for key, value, criterion, mark in result["table_rows"]]
        failing = [row[0] for row in result["table_rows"] if row[3] == "❌"]
        if failing:
            failed_presets += 1
            lines += ["", "Failing: " + ", ".join(failing)]
        lines += [
            "",
            f"**✅ {result['num_passed']} Passed, ❌ {result['num_failed']} Failed** ({result.get('elapsed_s', 0.0):.1f} s)",
            "",
        ]
    verdict = "✅ every preset passed" if failed_presets == 0 else f"❌ {failed_presets} of {len(results)} presets failed"
    lines += [f"**Overall:** {verdict}", ""]
    with open(output_file, "w") as f:
        f.write("\n".join(lines))
    print(f"✅ Report written to {output_file}")


def validate(
    report_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    cumulant: Optional[Cumulant] = None,
    seed: int = 42,
    n_paths: int = 4000,
) -> Tuple[bool, List[Dict[str, Any]]]:
    """
    Run the checks for every preset in the manifest.

    Args:
        report_path: optional markdown output.
        overrides: flat parameter overrides applied to every preset (e.g. {"rho": -1}).
        cumulant: replacement for h in the Legendre identities; a wrong h must fail them.

    Returns:
        (all passed, per-preset results)
    """
    results = [
        check_preset(name, preset, overrides, cumulant, seed, n_paths)
        for name, preset in load_manifest()["presets"].items()
    ]
    if report_path:
        write_markdown_report(results, report_path, seed=seed, n_paths=n_paths)
    ok = all("error" not in r and r.get("num_failed", 0) == 0 for r in results)
    print(("✅ All checks passed" if ok else "❌ Validation failed"))
    return ok, results
