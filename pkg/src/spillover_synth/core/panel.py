#!/usr/bin/env python3
"""
Clustered Panel Model

Immutable unit x variable x period panel with a single treated unit, the
potential-outcome bookkeeping that goes with it, and the stacked pre-treatment
feature vectors consumed by the weight solver.

Feature block order is fixed: unit outcomes, neighborhood outcomes, unit
covariates, neighborhood covariates; inside a block entries run by variable,
then by period.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PanelError

FeatureLabel = Tuple[str, str, int]


class SynthesisMode(str, Enum):
    """Which feature blocks enter a solve."""
    CROSS_CLUSTER = "cross_cluster"
    WITHIN_CLUSTER = "within_cluster"


class FeatureRole(str, Enum):
    UNIT_OUTCOME = "unit_outcome"
    NEIGHBORHOOD_OUTCOME = "neighborhood_outcome"
    UNIT_COVARIATE = "unit_covariate"
    NEIGHBORHOOD_COVARIATE = "neighborhood_covariate"


class AllocationKind(str, Enum):
    """Within-cluster allocation relative to the treated unit."""
    ZERO = "z"
    ACTUAL = "e(1)"
    COUNTERFACTUAL = "e(i)"


@dataclass(frozen=True)
class UnitRecord:
    unit_id: str
    cluster_id: str


@dataclass(frozen=True)
class TreatmentAllocation:
    """Allocation vector over the treated cluster, treated unit first."""
    units: Tuple[str, ...]
    vector: Tuple[int, ...]

    def __post_init__(self):
        if len(self.units) != len(self.vector):
            raise PanelError("allocation vector length does not match cluster size")
        if any(v not in (0, 1) for v in self.vector):
            raise PanelError("allocation entries must be 0 or 1")
        if sum(self.vector) > 1:
            raise PanelError("at most one unit can be treated in an allocation")

    @classmethod
    def zero(cls, units: Sequence[str]) -> "TreatmentAllocation":
        return cls(tuple(units), tuple(0 for _ in units))

    @classmethod
    def exposing(cls, units: Sequence[str], unit: str) -> "TreatmentAllocation":
        if unit not in units:
            raise PanelError(f"unit {unit!r} is not in the treated cluster")
        return cls(tuple(units), tuple(int(u == unit) for u in units))

    @property
    def treated(self) -> Optional[str]:
        for unit, flag in zip(self.units, self.vector):
            if flag:
                return unit
        return None

    @property
    def kind(self) -> AllocationKind:
        treated = self.treated
        if treated is None:
            return AllocationKind.ZERO
        if treated == self.units[0]:
            return AllocationKind.ACTUAL
        return AllocationKind.COUNTERFACTUAL


@dataclass(frozen=True)
class OutcomeRole:
    """Potential-outcome label: own treatment and cluster allocation."""
    treatment: int
    allocation: AllocationKind

    def __str__(self) -> str:
        return f"({self.treatment}, {self.allocation.value})"


TREATED_UNDER_ZERO = OutcomeRole(1, AllocationKind.ZERO)
CONTROL_EXPOSED = OutcomeRole(0, AllocationKind.ACTUAL)
CONTROL_UNDER_ZERO = OutcomeRole(0, AllocationKind.ZERO)
CONTROL_UNREALIZED = OutcomeRole(0, AllocationKind.COUNTERFACTUAL)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    owner: str
    values: np.ndarray
    layout: Tuple[FeatureLabel, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] != len(self.layout):
            raise PanelError(
                f"feature vector for {self.owner!r} has {values.size} values "
                f"but {len(self.layout)} layout labels"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.layout)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced clustered panel with exactly one treated unit.

    ``values`` has shape (units, variables, periods); covariates may be NaN
    after ``t0``. The constructor checks structure and completeness; the
    design-level rule that the treated cluster has neighbors is checked by
    :meth:`validate_design` because placebo runs legitimately cast a singleton
    cluster as treated.
    """
    units: Tuple[UnitRecord, ...]
    times: Tuple[int, ...]
    t0: int
    variables: Tuple[str, ...]
    values: np.ndarray
    treated_unit: str
    outcomes: Tuple[str, ...]
    covariates: Tuple[str, ...] = ()

    _row: Dict[str, int] = field(init=False, repr=False, compare=False)
    _members: Dict[str, Tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "covariates", tuple(self.covariates))

        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        ids = [u.unit_id for u in self.units]
        if len(set(ids)) != len(ids):
            raise PanelError("duplicate unit ids in panel")
        expected = (len(self.units), len(self.variables), len(self.times))
        if values.shape != expected:
            raise PanelError(f"values shape {values.shape} does not match {expected}")
        if list(self.times) != sorted(set(self.times)):
            raise PanelError("periods must be strictly increasing")
        if self.t0 not in self.times:
            raise PanelError(f"t0={self.t0} is not one of the panel periods")
        n_pre = self.times.index(self.t0) + 1
        if n_pre < 2 or n_pre >= len(self.times):
            raise PanelError(
                "the panel needs at least two pre-treatment periods and one post-treatment period"
            )
        if not self.outcomes:
            raise PanelError("at least one outcome variable is required")
        unknown = [v for v in self.outcomes + self.covariates if v not in self.variables]
        if unknown:
            raise PanelError(f"unknown variables: {', '.join(unknown)}")
        if set(self.outcomes) & set(self.covariates):
            raise PanelError("a variable cannot be both an outcome and a covariate")

        row = {uid: i for i, uid in enumerate(ids)}
        if self.treated_unit not in row:
            raise PanelError(f"treated unit {self.treated_unit!r} is not in the panel")
        members: Dict[str, List[str]] = {}
        for unit in self.units:
            members.setdefault(unit.cluster_id, []).append(unit.unit_id)
        object.__setattr__(self, "_row", row)
        object.__setattr__(self, "_members", {c: tuple(sorted(m)) for c, m in members.items()})

        self._check_complete(n_pre)

    def _check_complete(self, n_pre: int) -> None:
        for name in self.outcomes:
            block = self.values[:, self.variables.index(name), :]
            if not np.all(np.isfinite(block)):
                unit_idx, time_idx = np.argwhere(~np.isfinite(block))[0]
                raise PanelError(
                    f"incomplete panel: outcome {name!r} missing for unit "
                    f"{self.units[unit_idx].unit_id!r} at period {self.times[time_idx]}"
                )
        for name in self.covariates:
            block = self.values[:, self.variables.index(name), :n_pre]
            if not np.all(np.isfinite(block)):
                unit_idx, time_idx = np.argwhere(~np.isfinite(block))[0]
                raise PanelError(
                    f"incomplete panel: covariate {name!r} missing for unit "
                    f"{self.units[unit_idx].unit_id!r} at period {self.times[time_idx]}"
                )

    def validate_design(self) -> None:
        """Check the rules that make spillover estimands defined."""
        if len(self.treated_neighbors) < 1:
            raise PanelError(
                f"treated cluster {self.treated_cluster!r} needs at least 2 units"
            )
        if not self.control_units:
            raise PanelError("no control units outside the treated cluster")

    # -- shape -------------------------------------------------------------

    @property
    def unit_ids(self) -> Tuple[str, ...]:
        return tuple(u.unit_id for u in self.units)

    @property
    def n_pre(self) -> int:
        return self.times.index(self.t0) + 1

    @property
    def pre_times(self) -> Tuple[int, ...]:
        return self.times[: self.n_pre]

    @property
    def post_times(self) -> Tuple[int, ...]:
        return self.times[self.n_pre:]

    def time_index(self, t: int) -> int:
        try:
            return self.times.index(t)
        except ValueError:
            raise PanelError(f"period {t} is not in the panel") from None

    # -- membership --------------------------------------------------------

    def row(self, unit: str) -> int:
        try:
            return self._row[unit]
        except KeyError:
            raise PanelError(f"unknown unit {unit!r}") from None

    def cluster_of(self, unit: str) -> str:
        return self.units[self.row(unit)].cluster_id

    def members(self, cluster: str) -> Tuple[str, ...]:
        try:
            return self._members[cluster]
        except KeyError:
            raise PanelError(f"unknown cluster {cluster!r}") from None

    def neighbors_of(self, unit: str) -> Tuple[str, ...]:
        return tuple(u for u in self.members(self.cluster_of(unit)) if u != unit)

    def has_neighbors(self, unit: str) -> bool:
        return len(self.members(self.cluster_of(unit))) > 1

    @property
    def treated_cluster(self) -> str:
        return self.cluster_of(self.treated_unit)

    @property
    def clusters(self) -> Tuple[str, ...]:
        """Cluster ids, treated cluster first."""
        others = sorted(c for c in self._members if c != self.treated_cluster)
        return (self.treated_cluster, *others)

    @property
    def treated_neighbors(self) -> Tuple[str, ...]:
        return self.neighbors_of(self.treated_unit)

    @property
    def treated_cluster_units(self) -> Tuple[str, ...]:
        """Treated unit first, then its neighbors."""
        return (self.treated_unit, *self.treated_neighbors)

    @property
    def control_units(self) -> Tuple[str, ...]:
        treated_cluster = self.treated_cluster
        return tuple(sorted(u.unit_id for u in self.units if u.cluster_id != treated_cluster))

    def covariates_for(self, outcome: str) -> Tuple[str, ...]:
        """Every other variable acts as a covariate when ``outcome`` is analysed."""
        if outcome not in self.outcomes:
            raise PanelError(f"{outcome!r} is not an outcome variable")
        others = [v for v in self.outcomes if v != outcome] + list(self.covariates)
        return tuple(v for v in self.variables if v in others)

    # -- values ------------------------------------------------------------

    def series(self, unit: str, variable: str) -> np.ndarray:
        """Values of ``variable`` for ``unit`` over every period."""
        try:
            var = self.variables.index(variable)
        except ValueError:
            raise PanelError(f"unknown variable {variable!r}") from None
        return self.values[self.row(unit), var, :]

    def value(self, unit: str, variable: str, t: int) -> float:
        v = float(self.series(unit, variable)[self.time_index(t)])
        if not np.isfinite(v):
            raise PanelError(f"incomplete panel: {variable!r} missing for {unit!r} at {t}")
        return v

    def outcome_matrix(self, units: Sequence[str], variable: str) -> np.ndarray:
        """(len(units), periods) matrix of ``variable``."""
        var = self.variables.index(variable)
        rows = [self.row(u) for u in units]
        return self.values[rows, var, :]

    # -- derived datasets --------------------------------------------------

    def with_treated_unit(self, unit: str, drop_clusters: Iterable[str] = ()) -> "PanelDataset":
        """Copy with ``unit`` cast as treated and whole clusters removed."""
        dropped = set(drop_clusters)
        if self.cluster_of(unit) in dropped:
            raise PanelError(f"cannot drop the cluster of the new treated unit {unit!r}")
        keep = [i for i, u in enumerate(self.units) if u.cluster_id not in dropped]
        return replace(
            self,
            units=tuple(self.units[i] for i in keep),
            values=self.values[keep],
            treated_unit=unit,
        )

    def scaled(self, factor: float, shift: float = 0.0,
               variables: Optional[Sequence[str]] = None) -> "PanelDataset":
        """Affine transform ``factor * x + shift`` of the chosen variables."""
        values = np.array(self.values)
        for name in variables or self.variables:
            var = self.variables.index(name)
            values[:, var, :] = factor * values[:, var, :] + shift
        return replace(self, values=values)

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.units == other.units
            and self.times == other.times
            and self.t0 == other.t0
            and self.variables == other.variables
            and self.treated_unit == other.treated_unit
            and self.outcomes == other.outcomes
            and self.covariates == other.covariates
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def summary(self) -> Dict[str, int]:
        return {
            "units": len(self.units),
            "clusters": len(self._members),
            "periods": len(self.times),
            "pre_periods": self.n_pre,
            "variables": len(self.variables),
        }


def neighborhood_average(ds: PanelDataset, unit: str, variable: str, t: int) -> float:
    """Leave-one-out mean of ``variable`` at ``t`` over the unit's cluster."""
    neighbors = ds.neighbors_of(unit)
    if not neighbors:
        raise PanelError(f"no neighbors: unit {unit!r} is alone in its cluster")
    return float(np.mean([ds.value(u, variable, t) for u in neighbors]))


def neighborhood_series(ds: PanelDataset, unit: str, variable: str) -> np.ndarray:
    """Leave-one-out cluster mean of ``variable`` over every period."""
    cluster = ds.members(ds.cluster_of(unit))
    if len(cluster) < 2:
        raise PanelError(f"no neighbors: unit {unit!r} is alone in its cluster")
    block = ds.outcome_matrix(cluster, variable)
    return (block.sum(axis=0) - ds.series(unit, variable)) / (len(cluster) - 1)


def feature_layout(ds: PanelDataset, outcome: str, mode: SynthesisMode) -> Tuple[FeatureLabel, ...]:
    mode = SynthesisMode(mode)
    covariates = ds.covariates_for(outcome)
    blocks = [(FeatureRole.UNIT_OUTCOME, (outcome,))]
    if mode is SynthesisMode.CROSS_CLUSTER:
        blocks.append((FeatureRole.NEIGHBORHOOD_OUTCOME, (outcome,)))
    blocks.append((FeatureRole.UNIT_COVARIATE, covariates))
    if mode is SynthesisMode.CROSS_CLUSTER:
        blocks.append((FeatureRole.NEIGHBORHOOD_COVARIATE, covariates))
    return tuple(
        (role.value, name, t) for role, names in blocks for name in names for t in ds.pre_times
    )


def build_feature_vector(ds: PanelDataset, unit: str, mode: SynthesisMode,
                         outcome: Optional[str] = None,
                         scales: Optional[np.ndarray] = None) -> FeatureVector:
    """Stack the unit's pre-treatment features in the fixed block order."""
    outcome = outcome or ds.outcomes[0]
    mode = SynthesisMode(mode)
    n_pre = ds.n_pre
    covariates = ds.covariates_for(outcome)

    parts = [ds.series(unit, outcome)[:n_pre]]
    if mode is SynthesisMode.CROSS_CLUSTER:
        parts.append(neighborhood_series(ds, unit, outcome)[:n_pre])
    parts.extend(ds.series(unit, name)[:n_pre] for name in covariates)
    if mode is SynthesisMode.CROSS_CLUSTER:
        parts.extend(neighborhood_series(ds, unit, name)[:n_pre] for name in covariates)

    values = np.concatenate(parts)
    if not np.all(np.isfinite(values)):
        raise PanelError(f"incomplete panel: pre-treatment features of {unit!r} are missing")
    if scales is not None:
        values = values / scales
    return FeatureVector(owner=unit, values=values, layout=feature_layout(ds, outcome, mode))


def feature_scales(ds: PanelDataset, outcome: str, mode: SynthesisMode) -> np.ndarray:
    """Cross-unit standard deviation of every feature dimension (1 where flat)."""
    mode = SynthesisMode(mode)
    units = [
        u for u in ds.unit_ids
        if mode is SynthesisMode.WITHIN_CLUSTER or ds.has_neighbors(u)
    ]
    matrix = np.vstack([build_feature_vector(ds, u, mode, outcome).values for u in units])
    scales = matrix.std(axis=0, ddof=1) if len(units) > 1 else np.ones(matrix.shape[1])
    scales[~(scales > 0)] = 1.0
    return scales


def period_rows(ds: PanelDataset, units: Sequence[str], outcome: str, t: int) -> np.ndarray:
    """Per-period feature rows (unit outcome, neighborhood outcome, unit and
    neighborhood covariates) for matching."""
    idx = ds.time_index(t)
    covariates = ds.covariates_for(outcome)
    rows = []
    for unit in units:
        row = [ds.series(unit, outcome)[idx], neighborhood_series(ds, unit, outcome)[idx]]
        row.extend(ds.series(unit, name)[idx] for name in covariates)
        row.extend(neighborhood_series(ds, unit, name)[idx] for name in covariates)
        rows.append(row)
    return np.asarray(rows, dtype=float)


def observed_outcome_role(ds: PanelDataset, unit: str, t: int) -> OutcomeRole:
    """Which potential outcome the observed value of ``unit`` at ``t`` reveals."""
    cluster = ds.cluster_of(unit)
    ds.time_index(t)
    if t <= ds.t0:
        return CONTROL_UNDER_ZERO
    if unit == ds.treated_unit:
        return TREATED_UNDER_ZERO
    if cluster == ds.treated_cluster:
        return CONTROL_EXPOSED
    return CONTROL_UNDER_ZERO


class FeatureBuilder:
    """Builds and caches feature vectors for one dataset and outcome.

    With ``standardize`` every dimension is divided by its cross-unit
    standard deviation.
    """

    def __init__(self, ds: PanelDataset, outcome: Optional[str] = None, standardize: bool = False):
        self.ds = ds
        self.outcome = outcome or ds.outcomes[0]
        self.standardize = standardize
        self._scales: Dict[SynthesisMode, np.ndarray] = {}
        self._cache: Dict[Tuple[str, SynthesisMode], FeatureVector] = {}

    def scales(self, mode: SynthesisMode) -> Optional[np.ndarray]:
        if not self.standardize:
            return None
        mode = SynthesisMode(mode)
        if mode not in self._scales:
            self._scales[mode] = feature_scales(self.ds, self.outcome, mode)
        return self._scales[mode]

    def vector(self, unit: str, mode: SynthesisMode) -> FeatureVector:
        mode = SynthesisMode(mode)
        key = (unit, mode)
        if key not in self._cache:
            self._cache[key] = build_feature_vector(
                self.ds, unit, mode, self.outcome, self.scales(mode)
            )
        return self._cache[key]

    def vectors(self, units: Sequence[str], mode: SynthesisMode) -> Tuple[FeatureVector, ...]:
        return tuple(self.vector(u, mode) for u in units)

    def post_outcomes(self, units: Sequence[str]) -> np.ndarray:
        """(len(units), post periods) matrix of the outcome."""
        return self.ds.outcome_matrix(units, self.outcome)[:, self.ds.n_pre:]

    def pre_outcomes(self, units: Sequence[str]) -> np.ndarray:
        return self.ds.outcome_matrix(units, self.outcome)[:, :self.ds.n_pre]
