"""
Property and simulation checks for the estimator as a whole
"""

import math

import numpy as np
import pytest
from click.testing import CliRunner
from scipy import stats

from spillover_synth.analysis.effects import estimate_effects
from spillover_synth.analysis.matching import build_match_sets
from spillover_synth.analysis.penalty import PenaltyConfig, make_grid, select_lambda, select_penalties
from spillover_synth.analysis.placebo import filter_by_rmspe, run_placebos, summarize
from spillover_synth.analysis.solver import (
    DonorDesign,
    SolveProblem,
    grid_oracle,
    solve_penalized_sc,
)
from spillover_synth.cli import cli
from spillover_synth.core.panel import FeatureVector
from spillover_synth.core.simulate import SimulationSpec, generate_synthetic_panel


def fv(owner, values):
    return FeatureVector(owner, values, tuple(("unit_outcome", "y", k) for k in range(len(values))))


# ============================================================================
# Solver
# ============================================================================

@pytest.mark.unit
class TestSolverAgainstOracle:
    def test_random_problems_match_lattice_search(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(2, 4))
            length = int(rng.integers(1, 9))
            penalty = float(rng.choice([0.0, 0.01, 0.1, 1.0]))
            problem = SolveProblem(
                fv("t", rng.normal(size=length)),
                tuple(fv(f"d{j}", rng.normal(size=length)) for j in range(n)),
                penalty,
            )
            solved = solve_penalized_sc(problem)
            oracle = grid_oracle(problem, 1e-3)
            assert abs(solved.objective_value - oracle.objective_value) <= 1e-3
            assert solved.objective_value <= oracle.objective_value + 1e-9

    @pytest.mark.parametrize("penalty", [0.0, 1.0, 10.0])
    def test_closed_form(self, penalty):
        design = DonorDesign(np.array([0.0]), np.array([[-2.0, 1.0]]))
        expected = min(max((1 - penalty / 2) / 3, 0.0), 1.0)
        assert design.solve(penalty).weights[0] == pytest.approx(expected, abs=1e-6)


# ============================================================================
# Simulation studies
# ============================================================================

@pytest.mark.slow
class TestSimulationRecovery:
    def test_direct_and_average_spillover_recovered(self):
        spec = SimulationSpec(direct_effect=2.0, spillover_effect=1.0, noise=0.05,
                              treated_loading_spread=0.5)
        grid = make_grid(100)
        direct_errors, spillover_errors = [], []
        for seed in range(50):
            sim = generate_synthetic_panel(spec, seed=seed)
            ds = sim.dataset
            match = build_match_sets(ds, 5, "y1")
            penalties, _ = select_penalties(ds, match, grid, outcome="y1")
            est = estimate_effects(ds, penalties.lambda_treated, penalties.lambda_neighbors,
                                   penalties.lambda_star, outcome="y1")
            direct_errors.append(est.direct.values - sim.truth.direct)
            spillover_errors.append(est.spillover_average.values - sim.truth.spillover_average)

        direct_errors = np.concatenate(direct_errors)
        spillover_errors = np.concatenate(spillover_errors)
        assert np.mean(np.abs(direct_errors)) <= 0.3
        assert np.mean(np.abs(spillover_errors)) <= 0.3
        assert abs(np.mean(direct_errors)) <= 0.1
        assert abs(np.mean(spillover_errors)) <= 0.1


@pytest.mark.slow
class TestNullCalibration:
    def test_placebo_p_values_are_uniform(self):
        spec = SimulationSpec(cluster_sizes=[4] * 11)
        penalties = PenaltyConfig(0.1, 0.1, 0.5, 1, "fixed")
        p_values = []
        for seed in range(200):
            ds = generate_synthetic_panel(spec, seed=1000 + seed).dataset
            actual = estimate_effects(ds, 0.1, 0.1, 0.5, outcome="y1", direct_only=True)
            runs = run_placebos(ds, penalties, outcome="y1", direct_only=True)
            runs = filter_by_rmspe(runs, math.inf)
            p_values.append(summarize(actual.direct, runs).aggregate.p_value)
        assert stats.kstest(p_values, "uniform").statistic <= 0.15


# ============================================================================
# Reproducibility and formats
# ============================================================================

@pytest.mark.integration
class TestReproducibility:
    def test_cv_is_deterministic(self, panel_csv, tmp_path):
        args = ["--user-config", str(tmp_path / "u.toml"), "-q", "cv", "--panel", str(panel_csv),
                "--treated-unit", "u01", "--t0", "2", "--grid-size", "20", "--outcome", "y1"]
        outputs = []
        for name in ("first", "second"):
            result = CliRunner().invoke(cli, [*args, "-o", str(tmp_path / name)])
            assert result.exit_code == 0, result.output
            outputs.append((tmp_path / name / "cv_report_y1.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_two_candidate_tie(self):
        assert select_lambda(np.array([0.4, 0.2]), np.array([0.7, 0.7])) == 1

    def test_default_grid_size(self):
        grid = make_grid()
        assert len(grid) == 10_000
        assert grid.values.min() > 0 and grid.values.max() <= 1
