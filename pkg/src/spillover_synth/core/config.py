#!/usr/bin/env python3
"""
Configuration Management System

Run configuration models validated with Pydantic, merged from built-in
defaults, the per-user defaults file, an optional run config file and
command-line overrides (lowest to highest precedence).
"""

import json
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SpilloverSynthError
from .user_config import UserConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(SpilloverSynthError):
    """Configuration-related errors."""


class GridSpec(BaseModel):
    """Candidate penalty grid on (0, 1]."""
    size: int = Field(default=10_000, ge=1)
    spacing: str = Field(default="uniform", pattern="^(uniform|log)$")
    lower: Optional[float] = Field(default=None, gt=0, le=1)


class PenaltyValues(BaseModel):
    """Fixed penalties; supplying them skips cross-validation."""
    lambda_treated: float = Field(gt=0, le=1)
    lambda_neighbors: float = Field(gt=0, le=1)
    lambda_star: float = Field(gt=0, le=1)


class RunConfig(BaseModel):
    """Everything one estimation run needs."""
    panel: Optional[Path] = None
    outcomes: List[str] = Field(default_factory=list)
    covariates: List[str] = Field(default_factory=list)
    treated_unit: Optional[str] = None
    t0: Optional[int] = None

    match_count: int = Field(default=5, ge=1)
    grid: GridSpec = Field(default_factory=GridSpec)
    penalties: Optional[PenaltyValues] = None
    rmspe_threshold: float = Field(default=1.0, gt=0)
    standardize: bool = False
    include_treated_cluster: bool = False
    check_uniqueness: bool = False
    phases: Dict[str, Tuple[int, int]] = Field(default_factory=dict)

    output_dir: Path = Field(default_factory=lambda: Path("spsynth-output"))
    seed: int = 0
    max_workers: int = Field(default=1, ge=1)

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    @field_validator("outcomes", "covariates", mode="before")
    @classmethod
    def split_names(cls, v):
        if isinstance(v, str):
            return [name.strip() for name in v.split(",") if name.strip()]
        return v

    @field_validator("rmspe_threshold", mode="before")
    @classmethod
    def parse_threshold(cls, v):
        if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "none"):
            return math.inf
        return v

    @field_validator("phases")
    @classmethod
    def check_phases(cls, v):
        for name, (first, last) in v.items():
            if name == "all":
                raise ValueError("phase name 'all' is reserved for the whole post-period")
            if first > last:
                raise ValueError(f"phase {name!r} starts after it ends ({first} > {last})")
        return v

    @model_validator(mode="after")
    def check_names(self):
        overlap = set(self.outcomes) & set(self.covariates)
        if overlap:
            raise ValueError(f"variables listed as both outcome and covariate: {', '.join(sorted(overlap))}")
        return self

    def require_panel(self) -> Tuple[Path, str, int]:
        """Panel path, treated unit and t0, or a ConfigError naming what is missing."""
        missing = [
            name for name, value in
            (("panel", self.panel), ("treated_unit", self.treated_unit), ("t0", self.t0))
            if value is None
        ]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
        return self.panel, self.treated_unit, self.t0

    def check_against(self, times: Tuple[int, ...]) -> None:
        """Phases must lie inside the post-period."""
        post = [t for t in times if t > self.t0]
        for name, (first, last) in self.phases.items():
            if not post or first < post[0] or last > post[-1]:
                raise ConfigError(
                    f"phase {name!r} ({first}..{last}) is outside the post-period"
                )

    def echo(self) -> Dict[str, Any]:
        """JSON-ready copy for the run manifest."""
        data = json.loads(self.model_dump_json())
        if math.isinf(self.rmspe_threshold):
            data["rmspe_threshold"] = "inf"
        return data


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a run config file: JSON by suffix, TOML otherwise."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read configuration file {path}: {e}") from e
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Invalid configuration file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Invalid configuration file {path}: top level must be a table")
    # TOML files may nest run settings under [run]
    if isinstance(data.get("run"), dict):
        run = data.pop("run")
        data = _deep_merge(data, run)
    if "panel" in data and not Path(data["panel"]).is_absolute():
        data["panel"] = str((path.parent / data["panel"]).resolve())
    return data


class ConfigManager:
    """Builds a validated RunConfig from layered sources."""

    def __init__(self, user_config: Optional[UserConfig] = None):
        self.user_config = user_config if user_config is not None else UserConfig()

    def layers(self, config_file: Optional[Path] = None,
               overrides: Optional[Mapping[str, Any]] = None) -> List[Tuple[str, Dict[str, Any]]]:
        layers = [("user defaults", self.user_config.run_defaults())]
        if config_file is not None:
            layers.append((str(config_file), load_config_file(config_file)))
        if overrides:
            layers.append(("command line", {k: v for k, v in overrides.items() if v is not None}))
        return layers

    def build(self, config_file: Optional[Path] = None,
              overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
        merged: Dict[str, Any] = {}
        source = "defaults"
        for source, data in self.layers(config_file, overrides):
            merged = _deep_merge(merged, data)
        try:
            return RunConfig(**merged)
        except ValidationError as e:
            origin = config_file if config_file is not None else source
            raise ConfigError(f"Invalid configuration ({origin}): {e}") from e


def load_config(config_file: Optional[Path] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                user_config: Optional[UserConfig] = None) -> RunConfig:
    """Convenience function to build a run configuration."""
    return ConfigManager(user_config).build(config_file, overrides)
