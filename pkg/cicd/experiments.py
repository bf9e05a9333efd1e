"""
Experiment runners: comparison tables, theta sweeps and their CSV output.
"""

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from langsmith import traceable

from cicd.settings import ExperimentConfig, RunSettings, load_manifest
from engine.esscher_opt import solve_european_theta
from engine.model_core import domain_J
from engine.pricing import compare, theta_sweep

TABLE_COLUMNS = ["K_or_T", "price", "std_error", "var_ratio", "adj_ratio", "time_s"]
FIGURE_COLUMNS = ["theta", "variance"]
# columns derived from wall-clock time
TIMED_COLUMNS = ["adj_ratio", "time_s"]
FLOAT_FORMAT = "%.6g"
# scheduling only; results do not depend on them
SCHEDULING_FIELDS = {"workers", "chunk_size"}


@dataclass
class ExperimentOutput:
    frame: pd.DataFrame
    metadata: List[str] = field(default_factory=list)

    def to_csv(self, raw: bool = False, stable: bool = False) -> str:
        """CSV text with '# '-prefixed metadata lines; `stable` blanks the timing columns."""
        frame = self.frame.copy()
        if stable:
            for column in TIMED_COLUMNS:
                if column in frame:
                    frame[column] = np.nan
        buffer = io.StringIO()
        for line in self.metadata:
            buffer.write(f"# {line}\n")
        frame.to_csv(buffer, index=False, float_format=None if raw else FLOAT_FORMAT, lineterminator="\n")
        return buffer.getvalue()

    def write(self, path: str, raw: bool = False, stable: bool = False) -> str:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(self.to_csv(raw=raw, stable=stable))
        return path


def version_line(manifest: Dict[str, Any]) -> str:
    return f"esscher-sampling {manifest.get('version', 'unknown')}"


def config_echo(config: ExperimentConfig) -> str:
    return "config " + config.model_dump_json(by_alias=True, exclude=SCHEDULING_FIELDS)


def table_config(table_id: int, settings: Optional[RunSettings] = None, **overrides) -> List[ExperimentConfig]:
    """One ExperimentConfig per row of a comparison table, in manifest order."""
    manifest = load_manifest()
    table = manifest["tables"].get(str(table_id))
    if table is None:
        raise KeyError(f"unknown table id {table_id}, expected one of {sorted(manifest['tables'])}")
    settings = settings or RunSettings()
    configs = []
    for row in table["rows"]:
        payoff = {"kind": table["kind"], "n_monitor": table.get("n_monitor", 1)}
        if table["sweep"] == "T":
            payoff.update(strike=table["strike"], maturity=row["value"])
        else:
            payoff.update(strike=row["value"], maturity=table["maturity"])
        data = {
            "experiment": f"table{table_id}",
            "preset": table["preset"],
            "payoff": payoff,
            "n_paths": settings.n_paths,
            "n_steps": settings.n_steps,
            "seed": settings.seed,
            "workers": settings.workers,
            "chunk_size": settings.chunk_size,
        }
        configs.append(ExperimentConfig.from_dict(data, overrides))
    return configs


@traceable(name="run_table")
def run_table(table_id: int, settings: Optional[RunSettings] = None, **overrides) -> ExperimentOutput:
    configs = table_config(table_id, settings, **overrides)
    manifest = load_manifest()
    table = manifest["tables"][str(table_id)]
    rows = []
    metadata = [table["caption"], config_echo(configs[0])]
    for config in configs:
        print(f"🔍 Table {table_id}: K={config.payoff.strike} T={config.payoff.maturity}")
        row = compare(
            config.model,
            config.payoff,
            config.n_paths,
            config.seed,
            n_steps=config.n_steps,
            workers=config.workers,
            chunk_size=config.chunk_size,
        )
        key = row.T if table["sweep"] == "T" else row.K
        rows.append([key, row.price, row.std_error, row.var_ratio, row.adj_ratio, row.time_s])
        metadata.append(
            f"{table['sweep']}={key} theta_1={row.thetas[0]:.10g} theta_n={row.thetas[-1]:.10g} "
            f"residual={row.solver_residual:.3g}"
        )
    metadata.append(version_line(manifest))
    return ExperimentOutput(pd.DataFrame(rows, columns=TABLE_COLUMNS), metadata)


def figure_theta_grid(config: ExperimentConfig, step: float) -> List[float]:
    """theta = 0, -step, -2 step, ... down to the last point inside J, in increasing order."""
    u_minus = domain_J(config.model).u_minus
    count = int(math.floor(-u_minus / step))
    grid = [-k * step for k in range(count + 1) if -k * step > u_minus]
    return sorted(grid)


def figure_config(fig_id: int, settings: Optional[RunSettings] = None, **overrides) -> ExperimentConfig:
    manifest = load_manifest()
    figure = manifest["figures"].get(str(fig_id))
    if figure is None:
        raise KeyError(f"unknown figure id {fig_id}, expected one of {sorted(manifest['figures'])}")
    settings = settings or RunSettings()
    data = {
        "experiment": f"fig{fig_id}",
        "preset": figure["preset"],
        "payoff": {"kind": "european_put", "strike": figure["strike"], "maturity": figure["maturity"]},
        "n_paths": settings.n_paths,
        "n_steps": settings.n_steps,
        "seed": settings.seed,
        "workers": settings.workers,
        "chunk_size": settings.chunk_size,
    }
    return ExperimentConfig.from_dict(data, overrides)


def run_sweep(config: ExperimentConfig, theta_grid: List[float], label: str = "sweep") -> ExperimentOutput:
    manifest = load_manifest()
    optimum = solve_european_theta(config.model, config.payoff)
    points = theta_sweep(
        config.model,
        config.payoff,
        theta_grid,
        config.n_paths,
        config.seed,
        n_steps=config.n_steps,
        workers=config.workers,
        chunk_size=config.chunk_size,
    )
    frame = pd.DataFrame([[p.theta, p.variance] for p in points], columns=FIGURE_COLUMNS)
    skipped = [p.theta for p in points if not p.feasible]
    metadata = [
        label,
        config_echo(config),
        f"theta_star={optimum.thetas[0]:.10g} residual={optimum.residual:.3g}",
    ]
    if skipped:
        metadata.append(f"skipped infeasible theta: {skipped}")
    metadata.append(version_line(manifest))
    return ExperimentOutput(frame, metadata)


@traceable(name="run_fig")
def run_fig(fig_id: int, settings: Optional[RunSettings] = None, **overrides) -> ExperimentOutput:
    figure = load_manifest()["figures"].get(str(fig_id))
    config = figure_config(fig_id, settings, **overrides)
    return run_sweep(config, figure_theta_grid(config, figure["step"]), figure["caption"])
