#!/usr/bin/env python3
"""
Synthetic Panel Generator

Draws clustered panels from a low-rank factor model shared by every cluster,
then injects known direct effects on the treated unit and spillovers on its
neighbors from the first post-period on. Used for demos, recovery studies and
null calibration of the placebo test.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from ..utils.logger import get_logger
from .panel import PanelDataset, UnitRecord

logger = get_logger(__name__)


class SimulationSpec(BaseModel):
    """Shape and parameters of a simulated panel.

    ``cluster_sizes[0]`` is the treated cluster; its first unit is treated.
    ``treated_loading_spread`` scales treated-cluster loadings around the
    control mean (1.0: same distribution as controls; below 1 keeps them
    inside the controls' range).
    """
    cluster_sizes: List[int] = Field(default_factory=lambda: [5] + [4] * 10)
    n_periods: int = Field(default=10, ge=3)
    t0: int = Field(default=2, ge=2)
    outcomes: List[str] = Field(default_factory=lambda: ["y1", "y2"])
    covariates: List[str] = Field(default_factory=list)
    n_factors: int = Field(default=2, ge=1)
    level: float = 10.0
    cluster_scale: float = Field(default=1.0, ge=0)
    unit_scale: float = Field(default=0.5, ge=0)
    factor_drift: float = Field(default=0.3, ge=0)
    noise: float = Field(default=0.05, ge=0)
    treated_loading_spread: float = Field(default=1.0, ge=0)
    direct_effect: float = 0.0
    spillover_effect: float = 0.0
    direct_profile: Optional[List[float]] = None
    spillover_profile: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_feasible(self):
        if not self.cluster_sizes or any(size < 1 for size in self.cluster_sizes):
            raise ValueError("every cluster needs at least one unit")
        if self.cluster_sizes[0] < 2:
            raise ValueError("infeasible spec: the treated cluster needs at least 2 units")
        if len(self.cluster_sizes) < 2:
            raise ValueError("infeasible spec: at least one control cluster is required")
        if self.t0 >= self.n_periods:
            raise ValueError("infeasible spec: t0 must be before the last period")
        if not self.outcomes:
            raise ValueError("at least one outcome is required")
        n_post = self.n_periods - self.t0
        for name in ("direct_profile", "spillover_profile"):
            profile = getattr(self, name)
            if profile is not None and len(profile) != n_post:
                raise ValueError(f"{name} needs {n_post} values, got {len(profile)}")
        return self

    @property
    def n_post(self) -> int:
        return self.n_periods - self.t0

    def direct_path(self) -> np.ndarray:
        if self.direct_profile is not None:
            return np.asarray(self.direct_profile, dtype=float)
        return np.full(self.n_post, self.direct_effect)

    def spillover_path(self) -> np.ndarray:
        if self.spillover_profile is not None:
            return np.asarray(self.spillover_profile, dtype=float)
        return np.full(self.n_post, self.spillover_effect)


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    """Injected effects, per outcome variable, over the post-periods."""
    periods: tuple
    direct: np.ndarray
    spillover: Dict[str, np.ndarray]
    spillover_average: np.ndarray
    unrealized: np.ndarray
    net: np.ndarray
    latent: Dict[str, np.ndarray]  # treated-cluster (0, z) outcomes, unit -> vars x periods

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k, t in enumerate(self.periods):
            rows.append(("direct", "", t, float(self.direct[k])))
            for unit in sorted(self.spillover):
                rows.append(("spillover_individual", unit, t, float(self.spillover[unit][k])))
            rows.append(("spillover_average", "", t, float(self.spillover_average[k])))
            rows.append(("unrealized", "", t, float(self.unrealized[k])))
            rows.append(("net_contrast", "", t, float(self.net[k])))
        return pd.DataFrame(rows, columns=["estimand", "unit", "period", "value"])


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    dataset: PanelDataset
    truth: SimulationTruth


def unit_name(index: int, width: int) -> str:
    return f"u{index:0{width}d}"


def cluster_name(index: int, width: int) -> str:
    return f"c{index:0{width}d}"


def generate_synthetic_panel(spec: Optional[SimulationSpec] = None, seed: int = 0) -> SimulatedPanel:
    """Draw one panel and its ground truth. The same spec and seed give the same panel."""
    spec = spec or SimulationSpec()
    rng = np.random.default_rng(seed)
    n_units = sum(spec.cluster_sizes)
    unit_width = max(2, len(str(n_units)))
    cluster_width = max(2, len(str(len(spec.cluster_sizes))))

    units: List[UnitRecord] = []
    for c, size in enumerate(spec.cluster_sizes, start=1):
        for _ in range(size):
            units.append(UnitRecord(unit_name(len(units) + 1, unit_width), cluster_name(c, cluster_width)))
    cluster_index = np.repeat(np.arange(len(spec.cluster_sizes)), spec.cluster_sizes)

    # loadings: cluster center plus unit deviation, shared across variables
    centers = rng.normal(0.0, spec.cluster_scale, size=(len(spec.cluster_sizes), spec.n_factors))
    loadings = centers[cluster_index] + rng.normal(0.0, spec.unit_scale, size=(n_units, spec.n_factors))
    treated_rows = np.flatnonzero(cluster_index == 0)
    control_mean = loadings[cluster_index != 0].mean(axis=0)
    loadings[treated_rows] = control_mean + spec.treated_loading_spread * (
        loadings[treated_rows] - control_mean
    )

    variables = list(spec.outcomes) + list(spec.covariates)
    n_vars, n_periods = len(variables), spec.n_periods
    steps = rng.normal(0.0, spec.factor_drift, size=(n_vars, spec.n_factors, n_periods))
    factors = 1.0 + np.cumsum(steps, axis=2)
    offsets = rng.normal(0.0, 1.0, size=n_vars)

    latent = spec.level + offsets[None, :, None] + np.einsum("uf,vft->uvt", loadings, factors)
    latent = latent + rng.normal(0.0, spec.noise, size=latent.shape)

    values = latent.copy()
    direct = spec.direct_path()
    spill = spec.spillover_path()
    n_outcomes = len(spec.outcomes)
    values[treated_rows[0], :n_outcomes, spec.t0:] += direct
    for row in treated_rows[1:]:
        values[row, :n_outcomes, spec.t0:] += spill

    ds = PanelDataset(
        units=tuple(units),
        times=tuple(range(1, n_periods + 1)),
        t0=spec.t0,
        variables=tuple(variables),
        values=values,
        treated_unit=units[0].unit_id,
        outcomes=tuple(spec.outcomes),
        covariates=tuple(spec.covariates),
    )
    ds.validate_design()

    periods = ds.post_times
    truth = SimulationTruth(
        periods=periods,
        direct=direct.copy(),
        spillover={units[row].unit_id: spill.copy() for row in treated_rows[1:]},
        spillover_average=spill.copy(),
        unrealized=spill.copy(),
        net=direct - spill,
        latent={units[row].unit_id: latent[row] for row in treated_rows},
    )
    logger.debug("Simulated %d units in %d clusters (seed %d)", n_units, len(spec.cluster_sizes), seed)
    return SimulatedPanel(ds, truth)
