#!/usr/bin/env python3
"""
Donor Matching

Mahalanobis nearest-neighbor matching of treated-cluster units to control
units, period by period, producing the matched pools used to cross-validate
the penalty terms.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, mahalanobis

from ..core.errors import MatchingError
from ..core.panel import PanelDataset, period_rows
from ..utils.logger import get_logger

logger = get_logger(__name__)

PINV_RCOND = 1e-10


class PoolKind(str, Enum):
    TREATED = "treated"
    NEIGHBORS = "neighbors"


@dataclass(frozen=True)
class RankedDistance:
    unit_id: str
    cluster_id: str
    distance: float


@dataclass(frozen=True)
class MatchSet:
    anchor: str
    matched: FrozenSet[Tuple[str, str]]
    per_period_detail: Dict[int, Tuple[RankedDistance, ...]] = field(default_factory=dict)

    @property
    def matched_units(self) -> Tuple[str, ...]:
        return tuple(sorted(unit for unit, _ in self.matched))


@dataclass(frozen=True)
class MatchResult:
    """Match sets for every treated-cluster unit plus the two pooled sets."""
    outcome: str
    m: int
    sets: Dict[str, MatchSet]
    treated_pool: Tuple[str, ...]
    neighbor_pool: Tuple[str, ...]

    def pool(self, which: PoolKind) -> Tuple[str, ...]:
        if PoolKind(which) is PoolKind.TREATED:
            return self.treated_pool
        return self.neighbor_pool


def mahalanobis_distance(x: np.ndarray, y: np.ndarray, sigma_inv: np.ndarray) -> float:
    """sqrt((x - y)' sigma_inv (x - y))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sigma_inv = np.atleast_2d(np.asarray(sigma_inv, dtype=float))
    if x.shape != y.shape or sigma_inv.shape != (x.size, x.size):
        raise MatchingError(
            f"dimension mismatch: x{x.shape}, y{y.shape}, sigma_inv{sigma_inv.shape}"
        )
    if not np.allclose(sigma_inv, sigma_inv.T, rtol=1e-10, atol=1e-12):
        raise MatchingError("sigma_inv must be symmetric")
    return float(mahalanobis(x, y, sigma_inv))


def _pseudo_inverse(cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Moore-Penrose inverse of a covariance and a whitening matrix W with W W' = pinv."""
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    cutoff = PINV_RCOND * max(float(eigenvalues.max(initial=0.0)), 0.0)
    keep = eigenvalues > cutoff
    inv_values = np.zeros_like(eigenvalues)
    inv_values[keep] = 1.0 / eigenvalues[keep]
    inverse = (eigenvectors * inv_values) @ eigenvectors.T
    whitening = eigenvectors * np.sqrt(inv_values)
    return inverse, whitening


def matchable_units(ds: PanelDataset) -> Tuple[str, ...]:
    """Units with neighborhood features (cluster of two or more)."""
    return tuple(u for u in ds.unit_ids if ds.has_neighbors(u))


def covariance_at_time(ds: PanelDataset, t: int, outcome: Optional[str] = None,
                       units: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Sample covariance (ddof=1) of the per-period feature rows and its pseudo-inverse."""
    outcome = outcome or ds.outcomes[0]
    if t > ds.t0:
        raise MatchingError(f"period {t} is after t0={ds.t0}")
    units = list(units) if units is not None else list(matchable_units(ds))
    if len(units) < 2:
        raise MatchingError("covariance needs at least 2 units")
    rows = period_rows(ds, units, outcome, t)
    return covariance_of_rows(rows)


def covariance_of_rows(rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.shape[0] < 2:
        raise MatchingError("covariance needs at least 2 rows")
    cov = np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))
    inverse, _ = _pseudo_inverse(cov)
    return cov, inverse


def build_match_sets(ds: PanelDataset, m: int = 5, outcome: Optional[str] = None) -> MatchResult:
    """Match every treated-cluster unit to its ``m`` nearest controls in each pre-period."""
    outcome = outcome or ds.outcomes[0]
    if m < 1:
        raise MatchingError("match count must be at least 1")

    anchors = ds.treated_cluster_units
    candidates = [u for u in ds.control_units if ds.has_neighbors(u)]
    skipped = [u for u in ds.control_units if not ds.has_neighbors(u)]
    if skipped:
        logger.debug("Controls without neighbors are not matchable: %s", ", ".join(skipped))
    if m > len(candidates):
        raise MatchingError(
            f"match count {m} exceeds the {len(candidates)} available control units"
        )

    population = list(matchable_units(ds))
    detail: Dict[str, Dict[int, Tuple[RankedDistance, ...]]] = {a: {} for a in anchors}
    for t in ds.pre_times:
        rows = period_rows(ds, population, outcome, t)
        cov = np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))
        # whitened Euclidean distance is the Mahalanobis distance under the pseudo-inverse
        _, whitening = _pseudo_inverse(cov)
        white = dict(zip(population, rows @ whitening))

        anchor_rows = np.vstack([white[a] for a in anchors])
        candidate_rows = np.vstack([white[c] for c in candidates])
        distances = cdist(anchor_rows, candidate_rows, metric="euclidean")

        for a, anchor in enumerate(anchors):
            # candidates are sorted by id, so a stable sort breaks ties by id
            order = np.argsort(distances[a], kind="stable")[:m]
            detail[anchor][t] = tuple(
                RankedDistance(candidates[j], ds.cluster_of(candidates[j]), float(distances[a, j]))
                for j in order
            )

    sets = {
        anchor: MatchSet(
            anchor=anchor,
            matched=frozenset(
                (r.unit_id, r.cluster_id) for ranked in per_period.values() for r in ranked
            ),
            per_period_detail=per_period,
        )
        for anchor, per_period in detail.items()
    }
    treated_pool = sets[ds.treated_unit].matched_units
    neighbor_pool = tuple(sorted({u for a in ds.treated_neighbors for u in sets[a].matched_units}))
    logger.info(
        "Matched %s: |H(1)|=%d, |H|=%d (m=%d over %d pre-periods)",
        outcome, len(treated_pool), len(neighbor_pool), m, ds.n_pre,
    )
    return MatchResult(
        outcome=outcome, m=m, sets=sets, treated_pool=treated_pool, neighbor_pool=neighbor_pool
    )
