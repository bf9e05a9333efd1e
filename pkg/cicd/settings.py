import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from engine.esscher_opt import PayoffSpec
from engine.model_core import ModelSpec, check_admissible

MANIFEST_PATH = Path(__file__).with_name("experiment_manifest.json")


# --- Configuration ---
class RunSettings(BaseSettings):
    """
    Run-time defaults for experiments.
    Loads settings from ESSCHER_* environment variables and an optional .env file.
    """
    n_paths: int = Field(10_000, ge=2, description="Monte Carlo paths per estimator.")
    n_steps: int = Field(200, ge=1, description="Euler steps per path.")
    seed: int = Field(42, ge=0, description="Root seed of the per-path random streams.")
    workers: int = Field(1, ge=1, description="Threads used for path generation.")
    chunk_size: int = Field(2048, ge=1, description="Paths per deterministic work unit.")
    raw: bool = Field(False, description="Write CSV numbers at full precision.")

    model_config = SettingsConfigDict(
        env_prefix="ESSCHER_",
        env_file=".env",
        env_file_encoding='utf-8',
        extra='ignore'
    )


def load_manifest(path: Optional[Path] = None) -> Dict[str, Any]:
    with open(path or MANIFEST_PATH, "r") as f:
        return json.load(f)


def preset_model(name: str, manifest: Optional[Dict[str, Any]] = None) -> ModelSpec:
    presets = (manifest or load_manifest())["presets"]
    if name not in presets:
        raise KeyError(f"unknown preset '{name}', expected one of {sorted(presets)}")
    return ModelSpec.model_validate(presets[name])


# --- Pydantic Models ---
class ExperimentConfig(BaseModel):
    """
    One experiment: model, payoff and Monte Carlo budget.
    """
    experiment: Literal[
        "table1", "table2", "table3", "table4", "table5", "table6", "table7", "fig1", "fig2", "custom"
    ] = Field(
        "custom",
        description="Experiment id."
    )
    model: ModelSpec = Field(
        ...,
        description="Heston parameters, with optional jumps."
    )
    payoff: PayoffSpec = Field(
        ...,
        description="Put payoff priced by the experiment."
    )
    n_paths: int = Field(
        10_000,
        ge=2,
        description="Monte Carlo paths per estimator."
    )
    n_steps: int = Field(
        200,
        ge=1,
        description="Euler steps per path."
    )
    seed: int = Field(
        42,
        ge=0,
        description="Root seed."
    )
    workers: int = Field(
        1,
        ge=1,
        description="Threads used for path generation."
    )
    chunk_size: int = Field(
        2048,
        ge=1,
        description="Paths per deterministic work unit."
    )

    @model_validator(mode="after")
    def _admissible(self) -> "ExperimentConfig":
        check_admissible(self.model)
        return self

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """Load a JSON config; a "preset" key fills in the model before "model" entries apply."""
        with open(path, "r") as f:
            data = json.load(f)
        return cls.from_dict(data, overrides)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        data = dict(data)
        overrides = dict(overrides or {})
        preset = overrides.pop("preset", None) or data.pop("preset", None)
        data.pop("preset", None)
        model: Dict[str, Any] = {}
        if preset:
            presets = load_manifest()["presets"]
            if preset not in presets:
                raise KeyError(f"unknown preset '{preset}', expected one of {sorted(presets)}")
            model = {section: dict(values) for section, values in presets[preset].items()}
        for section, values in (data.get("model") or {}).items():
            model[section] = None if values is None else {**(model.get(section) or {}), **values}
        data["model"] = model
        if data.get("payoff") is not None:
            data["payoff"] = dict(data["payoff"])
        for key, value in overrides.items():
            apply_override(data, key, value)
        return cls.model_validate(data)


HESTON_FIELDS = {"lambda", "mu", "zeta", "rho", "v0", "s0"}
JUMP_FIELDS = {"r", "alpha"}
PAYOFF_FIELDS = {"kind", "strike", "maturity", "n_monitor"}


def apply_override(data: Dict[str, Any], key: str, value: Any) -> None:
    """Set a flat flag name (lambda, strike, seed, ...) inside a nested config dict."""
    if value is None:
        return
    if key in HESTON_FIELDS:
        data.setdefault("model", {}).setdefault("heston", {})[key] = value
    elif key in JUMP_FIELDS:
        jumps = data.setdefault("model", {}).get("jumps") or {}
        jumps[key] = value
        data["model"]["jumps"] = jumps
    elif key in PAYOFF_FIELDS:
        data.setdefault("payoff", {})[key] = value
    else:
        data[key] = value
