#!/usr/bin/env python3
"""
Penalty Selection

Grid search for the three penalty terms by leave-one-out prediction of
post-treatment outcomes of untreated units:

- lambda_treated: pseudo-treated units drawn from the controls matched to the
  treated unit, synthesized from matched controls of other clusters;
- lambda_neighbors: same, using the controls matched to the treated unit's
  neighbors;
- lambda_star: each neighbor of the treated unit synthesized from the other
  neighbors with unit-level features only.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.errors import CrossValidationError, SolverError
from ..core.panel import FeatureBuilder, PanelDataset, SynthesisMode
from ..utils.logger import get_logger
from .matching import MatchResult, PoolKind
from .solver import DEFAULT_OPTIONS, DonorDesign, SolverOptions

logger = get_logger(__name__)

DEFAULT_GRID_SIZE = 10_000
TIE_ABS = 1e-12
TIE_REL = 1e-9


class Criterion(str, Enum):
    TREATED = "lambda_treated"
    NEIGHBORS = "lambda_neighbors"
    STAR = "lambda_star"


@dataclass(frozen=True, eq=False)
class PenaltyGrid:
    values: np.ndarray
    description: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise CrossValidationError("penalty grid must be a nonempty 1-D array")
        if not np.all(values > 0) or not np.all(np.isfinite(values)):
            raise CrossValidationError("penalty grid values must be positive and finite")
        values = np.unique(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def maximum(self) -> float:
        return float(self.values[-1])


def default_grid() -> PenaltyGrid:
    """The uniform grid k/10000, k = 1..10000."""
    return make_grid(DEFAULT_GRID_SIZE)


def make_grid(size: int = DEFAULT_GRID_SIZE, spacing: str = "uniform",
              lower: Optional[float] = None) -> PenaltyGrid:
    if size < 1:
        raise CrossValidationError("grid size must be at least 1")
    if spacing == "uniform":
        return PenaltyGrid(np.arange(1, size + 1) / size, f"uniform:{size}")
    if spacing == "log":
        lower = lower or 1.0 / size
        if not 0 < lower <= 1:
            raise CrossValidationError("log grid lower bound must lie in (0, 1]")
        return PenaltyGrid(np.geomspace(lower, 1.0, size), f"log:{size}:{lower:g}")
    raise CrossValidationError(f"unknown grid spacing {spacing!r}")


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_treated: float
    lambda_neighbors: float
    lambda_star: float
    grid_size: int
    grid: str
    lambda_star_fallback: bool = False

    def __post_init__(self):
        for name in ("lambda_treated", "lambda_neighbors", "lambda_star"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise CrossValidationError(f"{name} must lie in (0, 1], got {value}")
        if self.grid_size < 1:
            raise CrossValidationError("grid_size must be at least 1")

    def value(self, criterion: Criterion) -> float:
        return getattr(self, Criterion(criterion).value)


@dataclass(eq=False)
class CriterionCurve:
    criterion: Criterion
    grid: np.ndarray
    rmspe: np.ndarray
    chosen_lambda: float
    chosen_rmspe: float
    pseudo_units: Tuple[str, ...]
    residuals: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped: Tuple[str, ...] = ()


@dataclass(eq=False)
class CvReport:
    """CV curves per criterion for one outcome.

    The chosen penalty is the smallest one whose pooled RMSPE lies within
    ``1e-12 + 1e-9 * min`` of the curve minimum, so ``chosen_rmspe`` can exceed
    the minimum by at most that band. Residuals are kept at the chosen penalty.
    """
    outcome: str
    curves: Dict[Criterion, CriterionCurve] = field(default_factory=dict)

    def chosen(self, criterion: Criterion) -> float:
        return self.curves[Criterion(criterion)].chosen_lambda

    def merge(self, other: "CvReport") -> "CvReport":
        if other.outcome != self.outcome:
            raise CrossValidationError("cannot merge reports of different outcomes")
        return CvReport(self.outcome, {**self.curves, **other.curves})

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame({"criterion": c.value, "lambda": curve.grid, "rmspe": curve.rmspe})
            for c, curve in sorted(self.curves.items(), key=lambda item: item[0].value)
        ]
        if not frames:
            return pd.DataFrame(columns=["criterion", "lambda", "rmspe"])
        return pd.concat(frames, ignore_index=True)

    def residual_frame(self) -> pd.DataFrame:
        """Post-period residuals of each pseudo-treated unit at the chosen penalty."""
        rows = []
        for criterion, curve in self.curves.items():
            for unit, residuals in sorted(curve.residuals.items()):
                for k, value in enumerate(residuals):
                    rows.append((criterion.value, unit, k + 1, float(value)))
        return pd.DataFrame(rows, columns=["criterion", "pseudo_unit", "post_period", "residual"])


def pooled_rmspe(residuals: np.ndarray) -> float:
    """sqrt of the mean squared residual over units x post-periods."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise CrossValidationError("no residuals to pool")
    return float(np.sqrt(np.sum(residuals ** 2) / residuals.size))


def select_lambda(grid: np.ndarray, curve: np.ndarray) -> int:
    """Index of the minimizing candidate, near-ties going to the smallest penalty."""
    grid = np.asarray(grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    if grid.shape != curve.shape or grid.size == 0:
        raise CrossValidationError("grid and curve must be nonempty and aligned")
    finite = np.isfinite(curve)
    if not finite.any():
        raise CrossValidationError("every candidate penalty failed")
    best = float(np.min(curve[finite]))
    tied = finite & (curve <= best + TIE_ABS + TIE_REL * best)
    candidates = np.flatnonzero(tied)
    return int(candidates[np.argmin(grid[candidates])])


@dataclass(frozen=True, eq=False)
class _LeaveOneOut:
    unit: str
    design: DonorDesign
    observed: np.ndarray   # post-period outcomes of the pseudo-treated unit
    donor_post: np.ndarray  # donors x post-period outcomes


def _residual_path(task: _LeaveOneOut, grid: np.ndarray, options: SolverOptions) -> np.ndarray:
    """Post-period residuals for every candidate, solved along the ladder with warm starts."""
    residuals = np.empty((grid.size, task.observed.size))
    start = None
    for g, penalty in enumerate(grid):
        weights = task.design.solve(float(penalty), start=start, options=options)
        start = np.array(weights.weights)
        residuals[g] = task.observed - weights.weights @ task.donor_post
    return residuals


def _run_curve(criterion: Criterion, tasks: List[_LeaveOneOut], grid: np.ndarray,
               skipped: Sequence[str], options: SolverOptions,
               max_workers: int) -> CriterionCurve:
    if not tasks:
        raise CrossValidationError(
            f"{criterion.value}: every pseudo-treated unit was skipped (empty donor pools)"
        )
    tasks = sorted(tasks, key=lambda task: task.unit)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            paths = list(pool.map(lambda task: _residual_path(task, grid, options), tasks))
    else:
        paths = [_residual_path(task, grid, options) for task in tasks]

    # grid x (units * post), units in sorted order
    stacked = np.stack(paths, axis=1).reshape(grid.size, -1)
    curve = np.sqrt(np.sum(stacked ** 2, axis=1) / stacked.shape[1])
    best = select_lambda(grid, curve)
    logger.info(
        "%s = %.6g (RMSPE %.6g over %d pseudo-treated units)",
        criterion.value, grid[best], curve[best], len(tasks),
    )
    return CriterionCurve(
        criterion=criterion,
        grid=np.array(grid),
        rmspe=curve,
        chosen_lambda=float(grid[best]),
        chosen_rmspe=float(curve[best]),
        pseudo_units=tuple(task.unit for task in tasks),
        residuals={task.unit: path[best] for task, path in zip(tasks, paths)},
        skipped=tuple(skipped),
    )


def _grid_values(grid) -> np.ndarray:
    if isinstance(grid, PenaltyGrid):
        return np.asarray(grid.values)
    return PenaltyGrid(np.asarray(grid, dtype=float), "custom").values


def cv_lambda_cross(ds: PanelDataset, match: MatchResult, which: PoolKind, grid,
                    outcome: Optional[str] = None, standardize: bool = False,
                    options: SolverOptions = DEFAULT_OPTIONS,
                    max_workers: int = 1) -> Tuple[float, CvReport]:
    """Leave-one-out selection of the cross-cluster penalty over a matched pool."""
    which = PoolKind(which)
    criterion = Criterion.TREATED if which is PoolKind.TREATED else Criterion.NEIGHBORS
    outcome = outcome or match.outcome
    values = _grid_values(grid)
    features = FeatureBuilder(ds, outcome, standardize)
    pool = match.pool(which)
    if not pool:
        raise CrossValidationError(f"{criterion.value}: matched pool is empty")

    tasks, skipped = [], []
    for unit in sorted(pool):
        cluster = ds.cluster_of(unit)
        donors = [d for d in pool if ds.cluster_of(d) != cluster]
        if not donors:
            logger.warning(
                "%s: pseudo-treated unit %s has no matched donors outside cluster %s; skipped",
                criterion.value, unit, cluster,
            )
            skipped.append(unit)
            continue
        target = features.vector(unit, SynthesisMode.CROSS_CLUSTER)
        donor_matrix = np.column_stack(
            [v.values for v in features.vectors(donors, SynthesisMode.CROSS_CLUSTER)]
        )
        tasks.append(_LeaveOneOut(
            unit=unit,
            design=DonorDesign(target.values, donor_matrix, donors),
            observed=features.post_outcomes([unit])[0],
            donor_post=features.post_outcomes(donors),
        ))

    curve = _run_curve(criterion, tasks, values, skipped, options, max_workers)
    return curve.chosen_lambda, CvReport(outcome, {criterion: curve})


def cv_lambda_star(ds: PanelDataset, grid, outcome: Optional[str] = None,
                   standardize: bool = False, options: SolverOptions = DEFAULT_OPTIONS,
                   max_workers: int = 1) -> Tuple[float, CvReport]:
    """Leave-one-out selection of the within-cluster penalty on the treated unit's neighbors."""
    outcome = outcome or ds.outcomes[0]
    neighbors = ds.treated_neighbors
    if len(neighbors) < 2:
        raise CrossValidationError(
            f"within-cluster CV undefined: treated cluster {ds.treated_cluster!r} "
            f"has {len(neighbors) + 1} units (needs at least 3)"
        )
    values = _grid_values(grid)
    features = FeatureBuilder(ds, outcome, standardize)

    tasks = []
    for unit in neighbors:
        donors = [d for d in neighbors if d != unit]
        target = features.vector(unit, SynthesisMode.WITHIN_CLUSTER)
        donor_matrix = np.column_stack(
            [v.values for v in features.vectors(donors, SynthesisMode.WITHIN_CLUSTER)]
        )
        tasks.append(_LeaveOneOut(
            unit=unit,
            design=DonorDesign(target.values, donor_matrix, donors),
            observed=features.post_outcomes([unit])[0],
            donor_post=features.post_outcomes(donors),
        ))

    curve = _run_curve(Criterion.STAR, tasks, values, (), options, max_workers)
    return curve.chosen_lambda, CvReport(outcome, {Criterion.STAR: curve})


def select_penalties(ds: PanelDataset, match: MatchResult, grid=None,
                     outcome: Optional[str] = None, standardize: bool = False,
                     options: SolverOptions = DEFAULT_OPTIONS,
                     max_workers: int = 1) -> Tuple[PenaltyConfig, CvReport]:
    """Run all three criteria; fall back to half the grid maximum for lambda_star
    when the treated cluster is too small for within-cluster CV."""
    grid = grid if grid is not None else default_grid()
    if not isinstance(grid, PenaltyGrid):
        grid = PenaltyGrid(np.asarray(grid, dtype=float), "custom")
    outcome = outcome or match.outcome
    kwargs = dict(outcome=outcome, standardize=standardize, options=options,
                  max_workers=max_workers)

    lambda_treated, report = cv_lambda_cross(ds, match, PoolKind.TREATED, grid, **kwargs)
    lambda_neighbors, neighbors_report = cv_lambda_cross(ds, match, PoolKind.NEIGHBORS, grid, **kwargs)
    report = report.merge(neighbors_report)

    fallback = False
    try:
        lambda_star, star_report = cv_lambda_star(ds, grid, **kwargs)
        report = report.merge(star_report)
    except CrossValidationError as e:
        if "within-cluster CV undefined" not in str(e):
            raise
        lambda_star = 0.5 * grid.maximum
        fallback = True
        logger.warning("%s; lambda_star set to %.6g (half the grid maximum)", e, lambda_star)

    config = PenaltyConfig(
        lambda_treated=lambda_treated,
        lambda_neighbors=lambda_neighbors,
        lambda_star=lambda_star,
        grid_size=len(grid),
        grid=grid.description,
        lambda_star_fallback=fallback,
    )
    return config, report
