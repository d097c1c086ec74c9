"""Unit tests for the simplex-constrained penalized weight solver."""

import numpy as np
import pytest

from spillover_synth.analysis.solver import (
    DonorDesign,
    SolveProblem,
    SolverOptions,
    WeightVector,
    grid_oracle,
    nearest_neighbor_weights,
    solve_penalized_sc,
    solve_unpenalized_sc,
)
from spillover_synth.core.errors import SolverError
from spillover_synth.core.panel import FeatureVector


def fv(owner, values):
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return FeatureVector(owner, values, tuple(("unit_outcome", "y", k) for k in range(values.size)))


def problem(target, donors, penalty=0.0):
    return SolveProblem(fv("t", target), tuple(fv(f"d{j}", d) for j, d in enumerate(donors)), penalty)


def random_problem(rng, n_donors, length, penalty):
    target = rng.normal(size=length)
    donors = [rng.normal(size=length) for _ in range(n_donors)]
    return problem(target, donors, penalty)


@pytest.mark.unit
class TestClosedForm:
    @pytest.mark.parametrize("penalty, expected", [
        (0.0, 1 / 3),
        (1.0, 1 / 6),
        (10.0, 0.0),
    ])
    def test_one_dimensional_two_donors(self, penalty, expected):
        weights = solve_penalized_sc(problem([0.0], [[-2.0], [1.0]], penalty))
        assert weights.weights[0] == pytest.approx(expected, abs=1e-6)
        assert weights.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_target_equal_to_donor(self):
        weights = solve_penalized_sc(problem([1.0, 2.0], [[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]], 0.5))
        assert weights.weight_of("d1") == pytest.approx(1.0, abs=1e-6)
        assert weights.objective_value == pytest.approx(0.0, abs=1e-9)

    def test_target_inside_hull(self):
        weights = solve_unpenalized_sc(fv("t", [0.5]), [fv("d0", [0.0]), fv("d1", [1.0])])
        np.testing.assert_allclose(weights.weights, [0.5, 0.5], atol=1e-6)
        assert weights.fit_term == pytest.approx(0.0, abs=1e-9)

    def test_target_outside_hull(self):
        weights = solve_unpenalized_sc(fv("t", [5.0]), [fv("d0", [0.0]), fv("d1", [1.0])])
        np.testing.assert_allclose(weights.weights, [0.0, 1.0], atol=1e-9)
        assert weights.fit_term == pytest.approx(16.0)

    def test_duplicate_donors_split_evenly(self):
        weights = solve_unpenalized_sc(fv("t", [2.0, 1.0]), [fv("d0", [2.0, 1.0]), fv("d1", [2.0, 1.0])])
        np.testing.assert_allclose(weights.weights, [0.5, 0.5], atol=1e-6)

    def test_single_donor(self):
        weights = solve_penalized_sc(problem([3.0, 4.0], [[1.0, 1.0]], 0.3))
        np.testing.assert_array_equal(weights.weights, [1.0])


@pytest.mark.unit
class TestLimits:
    def test_nearest_neighbor_limit(self):
        weights = nearest_neighbor_weights(fv("t", [0.0]), [fv("d0", [-2.0]), fv("d1", [1.0])])
        np.testing.assert_array_equal(weights.weights, [0.0, 1.0])
        assert weights.objective_value == weights.fit_term

    def test_nearest_neighbor_tie_goes_to_first(self):
        weights = nearest_neighbor_weights(fv("t", [0.0]), [fv("d0", [-1.0]), fv("d1", [1.0])])
        np.testing.assert_array_equal(weights.weights, [1.0, 0.0])

    def test_small_penalty_approaches_unpenalized_fit(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_problem(rng, int(rng.integers(2, 6)), int(rng.integers(2, 9)), 1e-8)
            small = solve_penalized_sc(p)
            plain = solve_unpenalized_sc(p.target, p.donors)
            assert abs(small.objective_value - plain.fit_term) <= 1e-6

    def test_large_penalty_selects_nearest_donor(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(100):
            p = random_problem(rng, int(rng.integers(2, 6)), int(rng.integers(2, 9)), 1e6)
            design = DonorDesign.from_problem(p)
            ordered = np.sort(design.distances)
            if ordered[1] - ordered[0] < 1e-3:
                continue
            weights = solve_penalized_sc(p)
            assert int(np.argmax(weights.weights)) == design.nearest()
            checked += 1
        assert checked > 50


@pytest.mark.unit
class TestProperties:
    def test_feasibility_and_objective_accounting(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            p = random_problem(rng, int(rng.integers(1, 8)), int(rng.integers(1, 9)),
                               float(rng.choice([0.0, 0.01, 0.5, 1.0])))
            w = solve_penalized_sc(p)
            assert np.all(w.weights >= 0)
            assert abs(w.weights.sum() - 1.0) <= 1e-9
            total = w.fit_term + p.penalty * w.penalty_term
            assert abs(w.objective_value - total) <= 1e-8 * max(1.0, abs(total))

    def test_penalty_term_decreases_along_ladder(self):
        rng = np.random.default_rng(22)
        ladder = [0.0, 0.01, 0.1, 0.5, 1.0, 10.0]
        for _ in range(30):
            p = random_problem(rng, 4, 6, 0.0)
            design = DonorDesign.from_problem(p)
            terms = [design.solve(lam).penalty_term for lam in ladder]
            assert all(b <= a + 1e-9 for a, b in zip(terms, terms[1:]))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            p = random_problem(rng, 4, 6, 0.2)
            perm = rng.permutation(4)
            shuffled = SolveProblem(p.target, tuple(p.donors[j] for j in perm), p.penalty)
            original = solve_penalized_sc(p).as_dict()
            permuted = solve_penalized_sc(shuffled).as_dict()
            for donor, weight in original.items():
                assert permuted[donor] == pytest.approx(weight, abs=1e-8)

    def test_warm_start_reaches_same_optimum(self):
        rng = np.random.default_rng(24)
        p = random_problem(rng, 5, 6, 0.3)
        design = DonorDesign.from_problem(p)
        cold = design.solve(0.3)
        warm = design.solve(0.3, start=np.full(5, 0.2))
        np.testing.assert_allclose(cold.weights, warm.weights, atol=1e-8)

    def test_uniqueness_check_runs(self):
        rng = np.random.default_rng(25)
        p = random_problem(rng, 3, 4, 0.1)
        w = solve_penalized_sc(p, SolverOptions(check_uniqueness=True))
        assert w.converged


@pytest.mark.unit
class TestInputValidation:
    def test_empty_donor_pool(self):
        with pytest.raises(SolverError, match="empty donor pool"):
            SolveProblem(fv("t", [1.0]), (), 0.1)

    def test_negative_penalty(self):
        with pytest.raises(SolverError, match="nonnegative"):
            problem([1.0], [[1.0]], -0.5)

    def test_nan_input(self):
        with pytest.raises(SolverError, match="NaN"):
            problem([np.nan], [[1.0]], 0.1)

    def test_layout_mismatch(self):
        with pytest.raises(SolverError, match="layout differs"):
            SolveProblem(fv("t", [1.0, 2.0]), (fv("d0", [1.0]),), 0.1)

    def test_misaligned_weight_vector(self):
        with pytest.raises(SolverError, match="not aligned"):
            WeightVector(np.array([0.5, 0.5]), ("d0",), 0.0, 0.0, 0.0, 0.0)


@pytest.mark.unit
class TestGridOracle:
    def test_single_donor(self):
        w = grid_oracle(problem([1.0], [[2.0]], 0.5), 0.1)
        np.testing.assert_array_equal(w.weights, [1.0])

    def test_matches_closed_form(self):
        w = grid_oracle(problem([0.0], [[-2.0], [1.0]], 0.0), 1 / 300)
        assert w.weights[0] == pytest.approx(1 / 3, abs=1e-9)

    def test_rejects_bad_resolution(self):
        with pytest.raises(SolverError, match="resolution"):
            grid_oracle(problem([0.0], [[1.0], [2.0]]), 0.0)

    def test_rejects_large_pools(self):
        with pytest.raises(SolverError, match="too large"):
            grid_oracle(problem([0.0], [[float(j)] for j in range(5)]), 0.1)
