"""Unit tests for the clustered panel model and feature construction."""

import numpy as np
import pytest

from conftest import build_panel
from spillover_synth.core.errors import PanelError
from spillover_synth.core.panel import (
    CONTROL_EXPOSED,
    CONTROL_UNDER_ZERO,
    TREATED_UNDER_ZERO,
    AllocationKind,
    FeatureBuilder,
    SynthesisMode,
    TreatmentAllocation,
    build_feature_vector,
    neighborhood_average,
    neighborhood_series,
    observed_outcome_role,
)


@pytest.fixture
def three_cluster():
    data = {
        ("a", "c1"): {"y": [1.0, 2.0, 3.0, 4.0]},
        ("b", "c1"): {"y": [2.0, 4.0, 6.0, 8.0]},
        ("c", "c1"): {"y": [4.0, 6.0, 8.0, 10.0]},
        ("d", "c2"): {"y": [6.0, 8.0, 10.0, 12.0]},
        ("e", "c2"): {"y": [2.0, 2.0, 2.0, 2.0]},
        ("f", "c3"): {"y": [5.0, 5.0, 5.0, 5.0]},
    }
    return build_panel(data, treated="a", t0=2)


@pytest.mark.unit
class TestNeighborhoodAverage:
    def test_three_unit_cluster(self, three_cluster):
        assert neighborhood_average(three_cluster, "a", "y", 1) == pytest.approx(3.0)
        assert neighborhood_average(three_cluster, "b", "y", 1) == pytest.approx(2.5)

    def test_two_unit_cluster_is_the_other_unit(self, three_cluster):
        assert neighborhood_average(three_cluster, "d", "y", 2) == 2.0
        assert neighborhood_average(three_cluster, "e", "y", 2) == 8.0

    def test_singleton_has_no_neighbors(self, three_cluster):
        with pytest.raises(PanelError, match="no neighbors"):
            neighborhood_average(three_cluster, "f", "y", 1)

    def test_leave_one_out_matches_direct_sum(self, small_panel):
        for unit in small_panel.unit_ids:
            if not small_panel.has_neighbors(unit):
                continue
            series = neighborhood_series(small_panel, unit, "y")
            for k, t in enumerate(small_panel.times):
                direct = np.mean([small_panel.value(u, "y", t) for u in small_panel.neighbors_of(unit)])
                assert abs(series[k] - direct) <= 1e-12


@pytest.mark.unit
class TestFeatureVector:
    def test_cross_cluster_length_with_covariate(self, small_panel):
        fv = build_feature_vector(small_panel, "a", SynthesisMode.CROSS_CLUSTER, "y")
        assert len(fv) == 2 * (1 + 1) * small_panel.n_pre

    def test_within_cluster_drops_neighborhood_blocks(self, small_panel):
        fv = build_feature_vector(small_panel, "a", SynthesisMode.WITHIN_CLUSTER, "y")
        assert len(fv) == (1 + 1) * small_panel.n_pre
        assert all(role.startswith("unit_") for role, _, _ in fv.layout)

    def test_no_covariates(self, three_cluster):
        fv = build_feature_vector(three_cluster, "a", SynthesisMode.CROSS_CLUSTER)
        assert len(fv) == 2 * three_cluster.n_pre
        np.testing.assert_allclose(fv.values, [1.0, 2.0, 3.0, 5.0])

    def test_layout_shared_across_units(self, small_panel):
        layouts = {
            build_feature_vector(small_panel, u, SynthesisMode.CROSS_CLUSTER).layout
            for u in small_panel.unit_ids if small_panel.has_neighbors(u)
        }
        assert len(layouts) == 1

    def test_block_order(self, small_panel):
        fv = build_feature_vector(small_panel, "a", SynthesisMode.CROSS_CLUSTER, "y")
        roles = [role for role, _, _ in fv.layout]
        assert roles == (["unit_outcome"] * 2 + ["neighborhood_outcome"] * 2
                         + ["unit_covariate"] * 2 + ["neighborhood_covariate"] * 2)

    def test_values_are_read_only(self, small_panel):
        fv = build_feature_vector(small_panel, "a", SynthesisMode.CROSS_CLUSTER)
        with pytest.raises(ValueError):
            fv.values[0] = 0.0

    def test_standardized_builder_divides_by_spread(self, small_panel):
        plain = FeatureBuilder(small_panel, "y").vector("a", SynthesisMode.CROSS_CLUSTER)
        scaled_builder = FeatureBuilder(small_panel, "y", standardize=True)
        scaled = scaled_builder.vector("a", SynthesisMode.CROSS_CLUSTER)
        scales = scaled_builder.scales(SynthesisMode.CROSS_CLUSTER)
        np.testing.assert_allclose(scaled.values * scales, plain.values)


@pytest.mark.unit
class TestPanelDataset:
    def test_treated_cluster_order(self, small_panel):
        assert small_panel.treated_cluster_units == ("a", "b", "c")
        assert small_panel.control_units == ("d", "e", "f", "g", "h", "i")
        assert small_panel.clusters[0] == "c1"

    def test_missing_outcome_is_rejected(self):
        data = {
            ("a", "c1"): {"y": [1.0, np.nan, 3.0]},
            ("b", "c1"): {"y": [1.0, 2.0, 3.0]},
            ("c", "c2"): {"y": [1.0, 2.0, 3.0]},
        }
        with pytest.raises(PanelError, match="incomplete panel"):
            build_panel(data, treated="a", t0=2)

    def test_needs_two_pre_periods(self):
        data = {("a", "c1"): {"y": [1.0, 2.0, 3.0]}, ("b", "c1"): {"y": [1.0, 2.0, 3.0]}}
        with pytest.raises(PanelError, match="two pre-treatment periods"):
            build_panel(data, treated="a", t0=1)

    def test_singleton_treated_cluster_fails_design(self, three_cluster):
        pseudo = three_cluster.with_treated_unit("f")
        with pytest.raises(PanelError, match="at least 2 units"):
            pseudo.validate_design()

    def test_with_treated_unit_drops_clusters(self, small_panel):
        pseudo = small_panel.with_treated_unit("d", drop_clusters=("c1",))
        assert pseudo.treated_unit == "d"
        assert "a" not in pseudo.unit_ids
        assert pseudo.control_units == ("g", "h", "i")

    def test_cannot_drop_own_cluster(self, small_panel):
        with pytest.raises(PanelError):
            small_panel.with_treated_unit("d", drop_clusters=("c2",))

    def test_values_are_immutable(self, small_panel):
        with pytest.raises(ValueError):
            small_panel.values[0, 0, 0] = 1.0

    def test_covariates_for_includes_other_outcomes(self, sim_panel):
        assert sim_panel.covariates_for("y1") == ("y2",)
        assert sim_panel.covariates_for("y2") == ("y1",)


@pytest.mark.unit
class TestPotentialOutcomes:
    def test_zero_allocation(self):
        alloc = TreatmentAllocation.zero(("a", "b", "c"))
        assert alloc.kind is AllocationKind.ZERO
        assert alloc.treated is None

    def test_actual_and_counterfactual_allocations(self):
        assert TreatmentAllocation.exposing(("a", "b"), "a").kind is AllocationKind.ACTUAL
        assert TreatmentAllocation.exposing(("a", "b"), "b").kind is AllocationKind.COUNTERFACTUAL

    def test_two_treated_units_rejected(self):
        with pytest.raises(PanelError):
            TreatmentAllocation(("a", "b"), (1, 1))

    def test_observed_roles(self, small_panel):
        assert observed_outcome_role(small_panel, "a", 1) == CONTROL_UNDER_ZERO
        assert observed_outcome_role(small_panel, "a", 3) == TREATED_UNDER_ZERO
        assert observed_outcome_role(small_panel, "b", 3) == CONTROL_EXPOSED
        assert observed_outcome_role(small_panel, "d", 4) == CONTROL_UNDER_ZERO
        assert str(TREATED_UNDER_ZERO) == "(1, z)"
