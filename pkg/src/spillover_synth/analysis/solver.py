#!/usr/bin/env python3
"""
Penalized Synthetic-Control Weight Solver

Minimizes

    ||x - D w||^2 + penalty * sum_j w_j ||x - d_j||^2

over the probability simplex, where x is the target feature vector and the
columns d_j of D are the donors. The quadratic program is solved with a
primal active-set method on the KKT system of the free weights. A small ridge
on the quadratic term makes the problem strictly convex, which selects the
minimum-norm optimum when the unpenalized problem has several.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.special import comb

from ..core.errors import SolverError
from ..core.panel import FeatureVector
from ..utils.logger import get_logger

logger = get_logger(__name__)

MAX_ORACLE_DONORS = 4
MAX_LATTICE_POINTS = 5_000_000


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 10_000
    tol: float = 1e-10
    ridge: float = 1e-8
    check_uniqueness: bool = False


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True, eq=False)
class SolveProblem:
    target: FeatureVector
    donors: Tuple[FeatureVector, ...]
    penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "donors", tuple(self.donors))
        if not self.donors:
            raise SolverError(f"empty donor pool for {self.target.owner!r}")
        if not (self.penalty >= 0) or math.isinf(self.penalty):
            raise SolverError(f"penalty must be finite and nonnegative, got {self.penalty}")
        for donor in self.donors:
            if donor.layout != self.target.layout:
                raise SolverError(
                    f"donor {donor.owner!r} layout differs from target {self.target.owner!r}"
                )
        values = np.concatenate([self.target.values] + [d.values for d in self.donors])
        if not np.all(np.isfinite(values)):
            raise SolverError("NaN or Inf in solve inputs")

    @property
    def donor_ids(self) -> Tuple[str, ...]:
        return tuple(d.owner for d in self.donors)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Simplex weights aligned with ``donor_ids``."""
    weights: np.ndarray
    donor_ids: Tuple[str, ...]
    objective_value: float
    fit_term: float
    penalty_term: float
    penalty: float
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).copy()
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        if weights.shape != (len(self.donor_ids),):
            raise SolverError("weights are not aligned with donor ids")

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.donor_ids, self.weights.tolist()))

    def weight_of(self, unit: str) -> float:
        return self.as_dict().get(unit, 0.0)

    @property
    def support(self) -> Tuple[str, ...]:
        return tuple(u for u, w in zip(self.donor_ids, self.weights) if w > 0)


class DonorDesign:
    """Quadratic form of one target against one donor pool.

    Everything that does not depend on the penalty is computed once, so a
    ladder of penalties can be solved cheaply with warm starts.
    """

    def __init__(self, target: np.ndarray, donors: np.ndarray,
                 donor_ids: Sequence[str] = ()):
        self.target = np.asarray(target, dtype=float)
        self.donors = np.asarray(donors, dtype=float)  # features x donors
        if self.donors.ndim != 2 or self.donors.shape[0] != self.target.size:
            raise SolverError("donor matrix does not match the target length")
        if self.donors.shape[1] == 0:
            raise SolverError("empty donor pool")
        self.donor_ids = tuple(donor_ids) or tuple(str(j) for j in range(self.donors.shape[1]))
        self.gram = self.donors.T @ self.donors
        self.cross = self.donors.T @ self.target
        self.distances = np.sum((self.donors - self.target[:, None]) ** 2, axis=0)

    @classmethod
    def from_problem(cls, problem: SolveProblem) -> "DonorDesign":
        matrix = np.column_stack([d.values for d in problem.donors])
        return cls(problem.target.values, matrix, problem.donor_ids)

    @property
    def n_donors(self) -> int:
        return self.donors.shape[1]

    def terms(self, weights: np.ndarray) -> Tuple[float, float]:
        """(fit term, penalty term) at ``weights``."""
        residual = self.target - self.donors @ weights
        return float(residual @ residual), float(self.distances @ weights)

    def nearest(self) -> int:
        return int(np.argmin(self.distances))

    def solve(self, penalty: float, start: Optional[np.ndarray] = None,
              options: SolverOptions = DEFAULT_OPTIONS) -> WeightVector:
        n = self.n_donors
        hessian = 2.0 * self.gram
        ridge = options.ridge * max(float(np.trace(hessian)) / n, np.finfo(float).tiny)
        hessian = hessian + ridge * np.eye(n)
        linear = -2.0 * self.cross + penalty * self.distances

        if start is None:
            start = np.zeros(n)
            start[self.nearest()] = 1.0
        weights, iterations, converged = _solve_simplex_qp(
            hessian, linear, start, options.max_iter, options.tol
        )
        if not converged:
            logger.warning(
                "Weight solve stopped after %d iterations without meeting the stationarity tolerance",
                iterations,
            )

        if options.check_uniqueness and n > 1:
            uniform, _, _ = _solve_simplex_qp(
                hessian, linear, np.full(n, 1.0 / n), options.max_iter, options.tol
            )
            gap = float(np.max(np.abs(uniform - weights)))
            if gap > 1e-6:
                logger.warning(
                    "Solver restarts disagree by %.3g at penalty %.6g; the optimum may not be unique",
                    gap, penalty,
                )

        return self._package(weights, penalty, iterations, converged)

    def _package(self, weights: np.ndarray, penalty: float, iterations: int = 0,
                 converged: bool = True) -> WeightVector:
        weights = _clean_simplex(weights)
        fit, pen = self.terms(weights)
        return WeightVector(
            weights=weights,
            donor_ids=self.donor_ids,
            objective_value=fit + penalty * pen,
            fit_term=fit,
            penalty_term=pen,
            penalty=penalty,
            iterations=iterations,
            converged=converged,
        )


def _clean_simplex(weights: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < -tol) or abs(weights.sum() - 1.0) > tol:
        raise SolverError("solver returned weights outside the simplex")
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum()


def _equality_qp(hessian: np.ndarray, linear: np.ndarray,
                 free: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Minimize over the free weights subject to sum(w) = 1 via the KKT system."""
    idx = np.flatnonzero(free)
    k = idx.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = hessian[np.ix_(idx, idx)]
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([-linear[idx], [1.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        try:
            solution = scipy.linalg.solve(kkt, rhs, assume_a="sym")
        except np.linalg.LinAlgError:
            solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return idx, solution[:k], -float(solution[k])


def _solve_simplex_qp(hessian: np.ndarray, linear: np.ndarray, start: np.ndarray,
                      max_iter: int, tol: float) -> Tuple[np.ndarray, int, bool]:
    """Primal active-set method for min 1/2 w'Hw + g'w on the simplex."""
    n = linear.size
    scale = max(float(np.abs(hessian).max()), float(np.abs(linear).max()), 1e-300)
    kkt_tol = tol * scale

    weights = np.asarray(start, dtype=float).copy()
    free = weights > 0
    if not free.any():
        raise SolverError("active-set start has no positive weight")

    for iteration in range(1, max_iter + 1):
        idx, z, multiplier = _equality_qp(hessian, linear, free)

        if np.all(z >= 0):
            weights = np.zeros(n)
            weights[idx] = z
            if free.all():
                return weights, iteration, True
            gradient = hessian @ weights + linear
            reduced = gradient - multiplier
            reduced[free] = np.inf
            j = int(np.argmin(reduced))
            if reduced[j] >= -kkt_tol:
                return weights, iteration, True
            free[j] = True
            continue

        # step toward the equality solution until a free weight hits zero
        current = weights[idx]
        step = z - current
        shrinking = step < 0
        ratios = np.full(idx.size, np.inf)
        ratios[shrinking] = current[shrinking] / -step[shrinking]
        block = int(np.argmin(ratios))
        alpha = min(float(ratios[block]), 1.0)
        weights = np.zeros(n)
        weights[idx] = current + alpha * step
        weights[idx[block]] = 0.0
        free[idx[block]] = False
        weights = np.clip(weights, 0.0, None)
        weights /= weights.sum()

    return weights, max_iter, False


def solve_penalized_sc(problem: SolveProblem,
                       options: SolverOptions = DEFAULT_OPTIONS) -> WeightVector:
    """Penalized synthetic-control weights for ``problem``."""
    return DonorDesign.from_problem(problem).solve(problem.penalty, options=options)


def solve_unpenalized_sc(target: FeatureVector, donors: Sequence[FeatureVector],
                         options: SolverOptions = DEFAULT_OPTIONS) -> WeightVector:
    """Classic synthetic control (penalty 0), minimum-norm among optima."""
    return solve_penalized_sc(SolveProblem(target, tuple(donors), 0.0), options)


def nearest_neighbor_weights(target: FeatureVector,
                             donors: Sequence[FeatureVector]) -> WeightVector:
    """The infinite-penalty limit: all weight on the closest donor.

    The objective reported is the fit term alone.
    """
    design = DonorDesign.from_problem(SolveProblem(target, tuple(donors), 0.0))
    weights = np.zeros(design.n_donors)
    weights[design.nearest()] = 1.0
    fit, pen = design.terms(weights)
    return WeightVector(
        weights=weights,
        donor_ids=design.donor_ids,
        objective_value=fit,
        fit_term=fit,
        penalty_term=pen,
        penalty=math.inf,
    )


def _simplex_lattice(n: int, steps: int) -> np.ndarray:
    """Integer compositions of ``steps`` into ``n`` nonnegative parts."""
    if n == 1:
        return np.array([[steps]])
    if n == 2:
        first = np.arange(steps + 1)
        return np.column_stack([first, steps - first])
    blocks = []
    for first in range(steps + 1):
        rest = _simplex_lattice(n - 1, steps - first)
        blocks.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(blocks)


def grid_oracle(problem: SolveProblem, resolution: float) -> WeightVector:
    """Best point of the simplex lattice with the given spacing (test oracle)."""
    if not resolution > 0:
        raise SolverError("resolution must be positive")
    n = len(problem.donors)
    if n > MAX_ORACLE_DONORS:
        raise SolverError(f"donor count {n} too large for enumeration (max {MAX_ORACLE_DONORS})")
    steps = max(int(round(1.0 / resolution)), 1)
    points = int(comb(steps + n - 1, n - 1, exact=True))
    if points > MAX_LATTICE_POINTS:
        raise SolverError(f"lattice of {points} points is too large; use a coarser resolution")

    design = DonorDesign.from_problem(problem)
    lattice = _simplex_lattice(n, steps) / steps
    residuals = design.target[None, :] - lattice @ design.donors.T
    fit = np.einsum("ij,ij->i", residuals, residuals)
    pen = lattice @ design.distances
    best = int(np.argmin(fit + problem.penalty * pen))
    return design._package(lattice[best], problem.penalty)
