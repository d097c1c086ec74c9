#!/usr/bin/env python3
"""
Effect Estimation

Imputes the missing potential outcomes of the treated cluster with penalized
synthetic controls and turns them into the estimand series:

- direct: treated unit, observed minus its (0, z) imputation;
- spillover_individual / spillover_average: each neighbor, observed minus its
  (0, z) imputation, and their mean;
- unrealized: what the treated unit would have received had a neighbor been
  treated instead, under constant spillover within the cluster;
- net_contrast: direct minus unrealized.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.errors import EstimationError, SolverError
from ..core.panel import (
    CONTROL_UNDER_ZERO,
    CONTROL_UNREALIZED,
    FeatureBuilder,
    OutcomeRole,
    PanelDataset,
    SynthesisMode,
    neighborhood_series,
)
from ..utils.logger import get_logger
from .solver import DEFAULT_OPTIONS, DonorDesign, SolverOptions, WeightVector

logger = get_logger(__name__)

IDENTITY_TOL = 1e-9
CONSTANT_SPILLOVER_NOTE = (
    "assumes the spillover the treated unit would receive is constant across "
    "which neighbor is treated"
)
NET_CONTRAST_NOTE = "positive values: receiving the treatment beat having a neighbor receive it"


class Estimand(str, Enum):
    DIRECT = "direct"
    SPILLOVER_INDIVIDUAL = "spillover_individual"
    SPILLOVER_AVERAGE = "spillover_average"
    UNREALIZED = "unrealized"
    NET_CONTRAST = "net_contrast"


@dataclass(frozen=True, eq=False)
class CounterfactualSeries:
    """Imputed post-period outcomes for one unit.

    ``fitted_pre`` is the synthetic unit-level outcome over the pre-periods;
    ``fitted_pre_neighborhood`` the synthetic neighborhood-level outcome, or
    None for within-cluster fits.
    """
    unit: str
    allocation: OutcomeRole
    periods: Tuple[int, ...]
    values: np.ndarray
    weights_used: WeightVector
    donors_used: Tuple[str, ...]
    pre_periods: Tuple[int, ...] = ()
    fitted_pre: np.ndarray = field(default_factory=lambda: np.empty(0))
    fitted_pre_neighborhood: Optional[np.ndarray] = None
    pre_period_rmspe: float = 0.0

    def __post_init__(self):
        if len(self.values) != len(self.periods):
            raise EstimationError(f"counterfactual for {self.unit!r} is not one value per period")
        if tuple(self.weights_used.donor_ids) != tuple(self.donors_used):
            raise EstimationError(f"weights for {self.unit!r} are not aligned with donors")


@dataclass(frozen=True, eq=False)
class EffectSeries:
    estimand: Estimand
    unit: str
    variable: str
    periods: Tuple[int, ...]
    values: np.ndarray
    observed: Optional[np.ndarray] = None
    imputed: Optional[np.ndarray] = None
    pre_period_rmspe: float = float("nan")
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.periods),):
            raise EstimationError(f"{self.estimand.value} series length does not match its periods")
        object.__setattr__(self, "values", values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "estimand": self.estimand.value,
            "variable": self.variable,
            "period": list(self.periods),
            "value": self.values,
        })


@dataclass(eq=False)
class EffectEstimates:
    """Every estimand series for one outcome variable plus the fits behind them."""
    variable: str
    direct: EffectSeries
    spillovers: Dict[str, EffectSeries]
    spillover_average: Optional[EffectSeries]
    unrealized: Optional[EffectSeries]
    net: Optional[EffectSeries]
    counterfactuals: Dict[str, CounterfactualSeries]
    xi: Optional[CounterfactualSeries] = None

    def series(self) -> List[EffectSeries]:
        out = [self.direct]
        out.extend(self.spillovers[u] for u in sorted(self.spillovers))
        out.extend(s for s in (self.spillover_average, self.unrealized, self.net) if s is not None)
        return out

    def by_estimand(self) -> Dict[Estimand, EffectSeries]:
        """Aggregate series keyed by estimand (individual spillovers omitted)."""
        return {
            s.estimand: s for s in self.series() if s.estimand is not Estimand.SPILLOVER_INDIVIDUAL
        }

    def to_frame(self, phases: Optional[Mapping[str, Tuple[int, int]]] = None) -> pd.DataFrame:
        """Long table of every series; with ``phases``, one extra row per series and phase
        holding the mean effect, labelled by the phase name in the period column."""
        frames = []
        for s in self.series():
            frame = s.to_frame()
            if s.estimand is Estimand.SPILLOVER_INDIVIDUAL:
                frame["estimand"] = f"{s.estimand.value}:{s.unit}"
            frames.append(frame)
        if phases:
            rows = []
            for s, frame in zip(self.series(), frames):
                for name, mean in phase_means(s, phases).items():
                    rows.append((frame["estimand"].iat[0], s.variable, name, mean))
            frames.append(pd.DataFrame(rows, columns=["estimand", "variable", "period", "value"]))
        return pd.concat(frames, ignore_index=True)


def _rmspe(residuals: np.ndarray) -> float:
    residuals = np.asarray(residuals, dtype=float)
    return float(np.sqrt(np.mean(residuals ** 2))) if residuals.size else 0.0


def impute_control_outcome(ds: PanelDataset, unit: str, weights: WeightVector,
                           donors: Sequence[str], outcome: Optional[str] = None,
                           allocation: OutcomeRole = CONTROL_UNDER_ZERO) -> CounterfactualSeries:
    """Weighted donor outcomes over the post-periods, with the pre-period fit."""
    outcome = outcome or ds.outcomes[0]
    donors = tuple(donors)
    if tuple(weights.donor_ids) != donors or len(weights.weights) != len(donors):
        raise EstimationError(f"misaligned weights: {len(weights.weights)} weights for "
                              f"{len(donors)} donors of {unit!r}")
    n_pre = ds.n_pre
    w = np.asarray(weights.weights)
    block = ds.outcome_matrix(donors, outcome)
    synthetic = w @ block
    observed = ds.series(unit, outcome)
    fitted_pre = synthetic[:n_pre]

    fitted_neighborhood = None
    if ds.has_neighbors(unit) and all(ds.has_neighbors(d) for d in donors):
        fitted_neighborhood = w @ np.vstack([neighborhood_series(ds, d, outcome) for d in donors])
        fitted_neighborhood = fitted_neighborhood[:n_pre]

    return CounterfactualSeries(
        unit=unit,
        allocation=allocation,
        periods=ds.post_times,
        values=synthetic[n_pre:],
        weights_used=weights,
        donors_used=donors,
        pre_periods=ds.pre_times,
        fitted_pre=fitted_pre,
        fitted_pre_neighborhood=fitted_neighborhood,
        pre_period_rmspe=_rmspe(observed[:n_pre] - fitted_pre),
    )


def _difference(ds: PanelDataset, cf: CounterfactualSeries, outcome: str,
                estimand: Estimand) -> EffectSeries:
    observed = ds.series(cf.unit, outcome)[ds.n_pre:]
    return EffectSeries(
        estimand=estimand,
        unit=cf.unit,
        variable=outcome,
        periods=cf.periods,
        values=observed - cf.values,
        observed=np.array(observed),
        imputed=np.array(cf.values),
        pre_period_rmspe=cf.pre_period_rmspe,
    )


def direct_effect(ds: PanelDataset, cf: CounterfactualSeries,
                  outcome: Optional[str] = None) -> EffectSeries:
    outcome = outcome or ds.outcomes[0]
    if cf.unit != ds.treated_unit:
        raise EstimationError(f"direct effect needs the treated unit's counterfactual, got {cf.unit!r}")
    if cf.allocation != CONTROL_UNDER_ZERO:
        raise EstimationError(
            f"direct effect needs the {CONTROL_UNDER_ZERO} imputation, got {cf.allocation}"
        )
    return _difference(ds, cf, outcome, Estimand.DIRECT)


def spillover_effects(ds: PanelDataset, cfs: Mapping[str, CounterfactualSeries],
                      outcome: Optional[str] = None) -> Tuple[Dict[str, EffectSeries], EffectSeries]:
    """Individual spillovers for every neighbor and their mean."""
    outcome = outcome or ds.outcomes[0]
    neighbors = ds.treated_neighbors
    missing = [u for u in neighbors if u not in cfs]
    if missing:
        raise EstimationError(f"missing neighbor counterfactual for {', '.join(missing)}")
    individual = {}
    for unit in neighbors:
        if cfs[unit].allocation != CONTROL_UNDER_ZERO:
            raise EstimationError(f"spillover of {unit!r} needs the {CONTROL_UNDER_ZERO} imputation")
        individual[unit] = _difference(ds, cfs[unit], outcome, Estimand.SPILLOVER_INDIVIDUAL)

    stacked = np.vstack([individual[u].values for u in neighbors])
    average = EffectSeries(
        estimand=Estimand.SPILLOVER_AVERAGE,
        unit=ds.treated_cluster,
        variable=outcome,
        periods=ds.post_times,
        values=stacked.mean(axis=0),
        observed=np.vstack([individual[u].observed for u in neighbors]).mean(axis=0),
        imputed=np.vstack([individual[u].imputed for u in neighbors]).mean(axis=0),
        pre_period_rmspe=_rmspe(np.concatenate([
            ds.series(u, outcome)[:ds.n_pre] - cfs[u].fitted_pre for u in neighbors
        ])),
    )
    return individual, average


def unrealized_spillover(ds: PanelDataset, xi: WeightVector, cf_zero: CounterfactualSeries,
                         outcome: Optional[str] = None) -> EffectSeries:
    """Synthetic treated unit built from its exposed neighbors, minus its (0, z) imputation."""
    outcome = outcome or ds.outcomes[0]
    neighbors = ds.treated_neighbors
    if set(xi.donor_ids) != set(neighbors) or len(xi.donor_ids) != len(neighbors):
        raise EstimationError("xi misaligned: weights must cover exactly the treated unit's neighbors")
    if cf_zero.unit != ds.treated_unit or cf_zero.allocation != CONTROL_UNDER_ZERO:
        raise EstimationError("unrealized spillover needs the treated unit's (0, z) imputation")

    exposed = np.asarray(xi.weights) @ ds.outcome_matrix(xi.donor_ids, outcome)
    n_pre = ds.n_pre
    return EffectSeries(
        estimand=Estimand.UNREALIZED,
        unit=ds.treated_unit,
        variable=outcome,
        periods=ds.post_times,
        values=exposed[n_pre:] - cf_zero.values,
        observed=exposed[n_pre:],
        imputed=np.array(cf_zero.values),
        pre_period_rmspe=_rmspe(ds.series(ds.treated_unit, outcome)[:n_pre] - exposed[:n_pre]),
        metadata={"assumption": CONSTANT_SPILLOVER_NOTE},
    )


def net_contrast(direct: EffectSeries, unrealized: EffectSeries) -> EffectSeries:
    if tuple(direct.periods) != tuple(unrealized.periods):
        raise EstimationError("direct and unrealized series cover different post-periods")
    return EffectSeries(
        estimand=Estimand.NET_CONTRAST,
        unit=direct.unit,
        variable=direct.variable,
        periods=direct.periods,
        values=direct.values - unrealized.values,
        observed=direct.observed,
        imputed=direct.imputed,
        pre_period_rmspe=direct.pre_period_rmspe,
        metadata={"interpretation": NET_CONTRAST_NOTE, **unrealized.metadata},
    )


def phase_means(series: EffectSeries,
                phases: Mapping[str, Tuple[int, int]]) -> Dict[str, float]:
    """Mean effect over each named inclusive period window."""
    periods = np.asarray(series.periods)
    out = {}
    for name, (first, last) in phases.items():
        mask = (periods >= first) & (periods <= last)
        if not mask.any():
            raise EstimationError(f"phase {name!r} ({first}..{last}) covers no post-period")
        out[name] = float(series.values[mask].mean())
    return out


def balance_table(ds: PanelDataset, cfs: Mapping[str, CounterfactualSeries],
                  xi: Optional[CounterfactualSeries] = None,
                  outcome: Optional[str] = None) -> pd.DataFrame:
    """Observed minus fitted pre-period outcomes.

    Rows are (level, period) with level ``Street`` for the unit itself and
    ``Neighbors`` for its neighborhood average; columns are the treated-cluster
    units followed by the unrealized-spillover fit.
    """
    outcome = outcome or ds.outcomes[0]
    columns = list(ds.treated_cluster_units)
    missing = [u for u in columns if u not in cfs]
    if missing:
        raise EstimationError(f"balance table is missing fits for {', '.join(missing)}")

    n_pre = ds.n_pre
    index = pd.MultiIndex.from_tuples(
        [(level, t) for level in ("Street", "Neighbors") for t in ds.pre_times],
        names=["level", "period"],
    )
    table = pd.DataFrame(index=index, dtype=float)
    for unit in columns:
        cf = cfs[unit]
        street = ds.series(unit, outcome)[:n_pre] - cf.fitted_pre
        if cf.fitted_pre_neighborhood is not None:
            neighbors = neighborhood_series(ds, unit, outcome)[:n_pre] - cf.fitted_pre_neighborhood
        else:
            neighbors = np.full(n_pre, np.nan)
        table[unit] = np.concatenate([street, neighbors])

    # within-cluster fit has no neighborhood block
    unrealized = np.full(2 * n_pre, np.nan)
    if xi is not None:
        unrealized[:n_pre] = ds.series(xi.unit, outcome)[:n_pre] - xi.fitted_pre
    table["unrealized"] = unrealized
    return table


# -- donor pools and orchestration -----------------------------------------


def cross_cluster_donors(ds: PanelDataset, unit: str) -> Tuple[str, ...]:
    """Control units eligible to synthesize ``unit`` across clusters."""
    cluster = ds.cluster_of(unit)
    controls = [u for u in ds.control_units if ds.cluster_of(u) != cluster]
    if ds.has_neighbors(unit):
        controls = [u for u in controls if ds.has_neighbors(u)]
    if not controls:
        raise EstimationError(f"empty donor pool for {unit!r}")
    return tuple(controls)


def synthesize(ds: PanelDataset, unit: str, donors: Sequence[str], penalty: float,
               mode: SynthesisMode, features: FeatureBuilder,
               options: SolverOptions = DEFAULT_OPTIONS,
               allocation: OutcomeRole = CONTROL_UNDER_ZERO) -> CounterfactualSeries:
    target = features.vector(unit, mode)
    matrix = np.column_stack([v.values for v in features.vectors(donors, mode)])
    try:
        weights = DonorDesign(target.values, matrix, donors).solve(penalty, options=options)
    except SolverError as e:
        raise EstimationError(f"weight solve for {unit!r} failed: {e}") from e
    logger.debug("%s: support %s at penalty %.6g", unit, ", ".join(weights.support), penalty)
    return impute_control_outcome(ds, unit, weights, donors, features.outcome, allocation)


def _target_mode(ds: PanelDataset, unit: str) -> SynthesisMode:
    if ds.has_neighbors(unit):
        return SynthesisMode.CROSS_CLUSTER
    return SynthesisMode.WITHIN_CLUSTER


def check_identities(estimates: EffectEstimates) -> None:
    """Accounting identities that every estimate set must satisfy."""
    def close(a, b) -> bool:
        a, b = np.asarray(a), np.asarray(b)
        scale = max(1.0, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
        return bool(np.all(np.abs(a - b) <= IDENTITY_TOL * scale))

    direct = estimates.direct
    if not close(direct.values + direct.imputed, direct.observed):
        raise EstimationError("identity violated: direct + imputed != observed")
    if estimates.spillover_average is not None:
        stacked = np.vstack([estimates.spillovers[u].values for u in sorted(estimates.spillovers)])
        if not close(estimates.spillover_average.values, stacked.mean(axis=0)):
            raise EstimationError("identity violated: average spillover != mean of individual spillovers")
    if estimates.net is not None and estimates.unrealized is not None:
        if not close(estimates.net.values, direct.values - estimates.unrealized.values):
            raise EstimationError("identity violated: net contrast != direct - unrealized")


def estimate_effects(ds: PanelDataset, lambda_treated: float, lambda_neighbors: float,
                     lambda_star: float, outcome: Optional[str] = None,
                     standardize: bool = False,
                     options: SolverOptions = DEFAULT_OPTIONS,
                     direct_only: bool = False) -> EffectEstimates:
    """Fit every imputation the estimands need and assemble the series.

    With ``direct_only`` (or a treated unit alone in its cluster) only the
    direct effect is produced.
    """
    outcome = outcome or ds.outcomes[0]
    features = FeatureBuilder(ds, outcome, standardize)
    treated = ds.treated_unit
    mode = _target_mode(ds, treated)

    cf_zero = synthesize(ds, treated, cross_cluster_donors(ds, treated), lambda_treated,
                         mode, features, options)
    direct = direct_effect(ds, cf_zero, outcome)
    counterfactuals = {treated: cf_zero}

    if direct_only or not ds.has_neighbors(treated):
        estimates = EffectEstimates(outcome, direct, {}, None, None, None, counterfactuals)
        check_identities(estimates)
        return estimates

    for unit in ds.treated_neighbors:
        counterfactuals[unit] = synthesize(
            ds, unit, cross_cluster_donors(ds, unit), lambda_neighbors,
            SynthesisMode.CROSS_CLUSTER, features, options,
        )
    individual, average = spillover_effects(ds, counterfactuals, outcome)

    xi = synthesize(ds, treated, ds.treated_neighbors, lambda_star,
                    SynthesisMode.WITHIN_CLUSTER, features, options,
                    allocation=CONTROL_UNREALIZED)
    unrealized = unrealized_spillover(ds, xi.weights_used, cf_zero, outcome)
    estimates = EffectEstimates(
        variable=outcome,
        direct=direct,
        spillovers=individual,
        spillover_average=average,
        unrealized=unrealized,
        net=net_contrast(direct, unrealized),
        counterfactuals=counterfactuals,
        xi=xi,
    )
    check_identities(estimates)
    logger.info(
        "%s: mean direct %.4g, mean spillover %.4g, mean unrealized %.4g",
        outcome, direct.values.mean(), average.values.mean(), unrealized.values.mean(),
    )
    return estimates


def unit_fit_rmspe(ds: PanelDataset, unit: str, lambda_treated: float, lambda_neighbors: float,
                   lambda_star: float, outcome: Optional[str] = None,
                   standardize: bool = False,
                   options: SolverOptions = DEFAULT_OPTIONS) -> Dict[str, float]:
    """Pre-period RMSPE of ``unit``'s own synthetic fit in the three fitting contexts.

    ``treated`` and ``neighbors`` synthesize the unit across clusters with
    lambda_treated and lambda_neighbors; ``unrealized`` synthesizes it from the
    other members of its cluster (the true treated unit removed) with
    lambda_star. Contexts that cannot be formed are NaN.
    """
    outcome = outcome or ds.outcomes[0]
    features = FeatureBuilder(ds, outcome, standardize)
    mode = _target_mode(ds, unit)
    out = {"treated": float("nan"), "neighbors": float("nan"), "unrealized": float("nan")}

    try:
        donors = cross_cluster_donors(ds, unit)
    except EstimationError:
        donors = ()
    if donors:
        for context, penalty in (("treated", lambda_treated), ("neighbors", lambda_neighbors)):
            out[context] = synthesize(ds, unit, donors, penalty, mode, features, options).pre_period_rmspe

    mates = [u for u in ds.neighbors_of(unit) if u != ds.treated_unit]
    if mates and unit != ds.treated_unit:
        out["unrealized"] = synthesize(
            ds, unit, mates, lambda_star, SynthesisMode.WITHIN_CLUSTER, features, options
        ).pre_period_rmspe
    elif unit == ds.treated_unit and ds.treated_neighbors:
        out["unrealized"] = synthesize(
            ds, unit, ds.treated_neighbors, lambda_star, SynthesisMode.WITHIN_CLUSTER,
            features, options,
        ).pre_period_rmspe
    return out
