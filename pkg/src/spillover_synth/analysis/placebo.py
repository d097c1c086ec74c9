#!/usr/bin/env python3
"""
Placebo Inference

In-space placebos: every control unit outside the true treated cluster is cast
as pseudo-treated in turn, its cluster playing the treated cluster, and the
whole estimation is repeated with the penalties already selected. The actual
estimates are then ranked by magnitude against the placebo distribution.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.errors import PlaceboError, SpilloverSynthError
from ..core.panel import PanelDataset
from ..utils.logger import get_logger
from .effects import EffectEstimates, EffectSeries, Estimand, estimate_effects
from .penalty import PenaltyConfig
from .solver import DEFAULT_OPTIONS, SolverOptions

logger = get_logger(__name__)

DEFAULT_RMSPE_THRESHOLD = 1.0
SUMMARY_ESTIMANDS = (
    Estimand.DIRECT,
    Estimand.SPILLOVER_AVERAGE,
    Estimand.UNREALIZED,
    Estimand.NET_CONTRAST,
)


@dataclass(frozen=True, eq=False)
class PlaceboRun:
    """One pseudo-treated re-estimation.

    ``rmspe`` holds the pre-period RMSPE per fitting context: ``direct`` (own
    cross-cluster fit), ``spillover`` (pooled neighbor fits) and
    ``unrealized`` (within-cluster fit).
    """
    pseudo_treated: str
    pseudo_cluster: str
    variable: str
    effects: Dict[Estimand, EffectSeries] = field(default_factory=dict)
    rmspe: Dict[str, float] = field(default_factory=dict)
    excluded: bool = False
    reason: str = ""
    penalties: Optional[PenaltyConfig] = None

    @property
    def filter_rmspe(self) -> float:
        return self.rmspe.get("direct", float("nan"))


@dataclass(frozen=True)
class PValue:
    label: str
    actual: float
    rank: int
    count: int
    p_value: float


@dataclass(eq=False)
class PlaceboSummary:
    estimand: Estimand
    variable: str
    periods: Tuple[int, ...]
    actual: np.ndarray
    placebo_units: Tuple[str, ...]
    placebo_values: np.ndarray  # included runs x periods
    per_period: List[PValue]
    aggregate: PValue
    phases: List[PValue] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.placebo_units) + 1

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (self.estimand.value, self.variable, p.label, p.actual, p.rank, p.count, p.p_value)
            for p in [*self.per_period, self.aggregate, *self.phases]
        ]
        return pd.DataFrame(
            rows, columns=["estimand", "variable", "period", "actual", "rank", "count", "p_value"]
        )


def _placebo_dataset(ds: PanelDataset, unit: str, include_treated_cluster: bool) -> PanelDataset:
    drop = () if include_treated_cluster else (ds.treated_cluster,)
    return ds.with_treated_unit(unit, drop_clusters=drop)


def _run_one(ds: PanelDataset, unit: str, penalties: PenaltyConfig, outcome: str,
             include_treated_cluster: bool, standardize: bool,
             options: SolverOptions, direct_only: bool = False) -> PlaceboRun:
    cluster = ds.cluster_of(unit)
    try:
        pseudo = _placebo_dataset(ds, unit, include_treated_cluster)
        estimates: EffectEstimates = estimate_effects(
            pseudo,
            penalties.lambda_treated,
            penalties.lambda_neighbors,
            penalties.lambda_star,
            outcome=outcome,
            standardize=standardize,
            options=options,
            direct_only=direct_only or not pseudo.has_neighbors(unit),
        )
    except SpilloverSynthError as e:
        logger.warning("Placebo run for %s failed and is excluded: %s", unit, e)
        return PlaceboRun(unit, cluster, outcome, excluded=True, reason=f"failed: {e}",
                          penalties=penalties)

    rmspe = {"direct": estimates.direct.pre_period_rmspe}
    reason = ""
    if estimates.spillover_average is not None:
        rmspe["spillover"] = estimates.spillover_average.pre_period_rmspe
        rmspe["unrealized"] = estimates.unrealized.pre_period_rmspe
    elif not direct_only:
        reason = "singleton cluster: direct effect only"
    return PlaceboRun(
        pseudo_treated=unit,
        pseudo_cluster=cluster,
        variable=outcome,
        effects=estimates.by_estimand(),
        rmspe=rmspe,
        reason=reason,
        penalties=penalties,
    )


def run_placebos(ds: PanelDataset, penalties: PenaltyConfig, outcome: Optional[str] = None,
                 include_treated_cluster: bool = False, standardize: bool = False,
                 options: SolverOptions = DEFAULT_OPTIONS,
                 max_workers: int = 1, direct_only: bool = False) -> List[PlaceboRun]:
    """Re-estimate with every control unit as pseudo-treated, sorted by unit id.

    With ``direct_only`` each run estimates the direct effect alone.
    """
    outcome = outcome or ds.outcomes[0]
    units = sorted(ds.control_units)
    if not units:
        raise PlaceboError("no eligible control unit for placebo runs")

    def job(unit: str) -> PlaceboRun:
        return _run_one(ds, unit, penalties, outcome, include_treated_cluster, standardize, options,
                       direct_only)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            runs = list(pool.map(job, units))
    else:
        runs = [job(u) for u in units]
    logger.info("%s: %d placebo runs (%d failed)", outcome, len(runs),
                sum(r.excluded for r in runs))
    return runs


def filter_by_rmspe(runs: Sequence[PlaceboRun],
                    threshold: float = DEFAULT_RMSPE_THRESHOLD) -> List[PlaceboRun]:
    """Mark runs whose own pre-period fit RMSPE exceeds ``threshold`` as excluded."""
    if not threshold > 0:
        raise PlaceboError("RMSPE threshold must be positive")
    out = []
    for run in runs:
        if not run.excluded and run.filter_rmspe > threshold:
            logger.debug("Placebo %s excluded: RMSPE %.4g > %.4g",
                         run.pseudo_treated, run.filter_rmspe, threshold)
            run = replace(run, excluded=True, reason="rmspe")
        out.append(run)
    return out


def rank_p_value(actual: float, placebos: np.ndarray) -> Tuple[int, int, float]:
    """(rank from the top, reference count, p) for |actual| among |placebos| plus itself.

    Ties in magnitude count toward the placebo side.
    """
    placebos = np.abs(np.asarray(placebos, dtype=float))
    rank = int(np.sum(placebos >= abs(actual))) + 1
    count = placebos.size + 1
    return rank, count, rank / count


def summarize(actual: EffectSeries, runs: Sequence[PlaceboRun],
              phases: Optional[Mapping[str, Tuple[int, int]]] = None) -> PlaceboSummary:
    included = sorted(
        (r for r in runs if not r.excluded and actual.estimand in r.effects),
        key=lambda r: r.pseudo_treated,
    )
    if not included:
        raise PlaceboError(f"no placebo distribution for {actual.estimand.value}")
    for run in included:
        if tuple(run.effects[actual.estimand].periods) != tuple(actual.periods):
            raise PlaceboError(f"placebo {run.pseudo_treated!r} covers different periods")

    values = np.vstack([r.effects[actual.estimand].values for r in included])
    per_period = []
    for k, t in enumerate(actual.periods):
        rank, count, p = rank_p_value(actual.values[k], values[:, k])
        per_period.append(PValue(str(t), float(actual.values[k]), rank, count, p))

    statistic = float(np.mean(np.abs(actual.values)))
    rank, count, p = rank_p_value(statistic, np.mean(np.abs(values), axis=1))
    aggregate = PValue("all", statistic, rank, count, p)

    phase_values = []
    periods = np.asarray(actual.periods)
    for name, (first, last) in (phases or {}).items():
        mask = (periods >= first) & (periods <= last)
        if not mask.any():
            raise PlaceboError(f"phase {name!r} covers no post-period")
        statistic = float(np.mean(np.abs(actual.values[mask])))
        rank, count, p = rank_p_value(statistic, np.mean(np.abs(values[:, mask]), axis=1))
        phase_values.append(PValue(name, statistic, rank, count, p))

    return PlaceboSummary(
        estimand=actual.estimand,
        variable=actual.variable,
        periods=tuple(actual.periods),
        actual=np.array(actual.values),
        placebo_units=tuple(r.pseudo_treated for r in included),
        placebo_values=values,
        per_period=per_period,
        aggregate=aggregate,
        phases=phase_values,
    )


def summarize_all(estimates: EffectEstimates, runs: Sequence[PlaceboRun],
                  phases: Optional[Mapping[str, Tuple[int, int]]] = None) -> List[PlaceboSummary]:
    """Summaries for every aggregate estimand that has a placebo distribution."""
    out = []
    actual = estimates.by_estimand()
    for estimand in SUMMARY_ESTIMANDS:
        if estimand not in actual:
            continue
        try:
            out.append(summarize(actual[estimand], runs, phases))
        except PlaceboError as e:
            logger.warning("%s: %s", estimates.variable, e)
    return out


def placebo_frame(runs: Sequence[PlaceboRun]) -> pd.DataFrame:
    """Long placebo distribution, one row per run, estimand and period."""
    rows = []
    for run in sorted(runs, key=lambda r: r.pseudo_treated):
        for estimand in SUMMARY_ESTIMANDS:
            series = run.effects.get(estimand)
            if series is None:
                continue
            for t, value in zip(series.periods, series.values):
                rows.append((estimand.value, run.variable, t, run.pseudo_treated,
                             float(value), run.excluded, run.filter_rmspe))
    return pd.DataFrame(
        rows, columns=["estimand", "variable", "period", "pseudo_unit", "value", "excluded", "rmspe"]
    )
