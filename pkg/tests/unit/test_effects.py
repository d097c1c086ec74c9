"""Unit tests for counterfactual imputation and effect estimands."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import build_panel
from spillover_synth.analysis.effects import (
    Estimand,
    balance_table,
    check_identities,
    cross_cluster_donors,
    direct_effect,
    estimate_effects,
    impute_control_outcome,
    net_contrast,
    phase_means,
    spillover_effects,
    unit_fit_rmspe,
    unrealized_spillover,
)
from spillover_synth.analysis.solver import WeightVector
from spillover_synth.core.errors import EstimationError
from spillover_synth.core.panel import CONTROL_UNREALIZED


def weights(donors, values):
    return WeightVector(np.array(values, dtype=float), tuple(donors), 0.0, 0.0, 0.0, 0.0)


@pytest.fixture
def hand_panel():
    data = {
        ("a", "c1"): {"y": [2.0, 3.0, 6.0, 9.0]},
        ("b", "c1"): {"y": [1.0, 2.0, 3.0, 5.0]},
        ("c", "c1"): {"y": [1.0, 2.0, 5.0, 7.0]},
        ("d", "c2"): {"y": [1.0, 2.0, 2.0, 4.0]},
        ("e", "c2"): {"y": [3.0, 4.0, 4.0, 8.0]},
        ("f", "c3"): {"y": [0.0, 1.0, 1.0, 1.0]},
        ("g", "c3"): {"y": [5.0, 5.0, 5.0, 5.0]},
    }
    return build_panel(data, treated="a", t0=2)


@pytest.fixture
def hand_counterfactuals(hand_panel):
    return {
        "a": impute_control_outcome(hand_panel, "a", weights("de", [0.5, 0.5]), ("d", "e")),
        "b": impute_control_outcome(hand_panel, "b", weights("d", [1.0]), ("d",)),
        "c": impute_control_outcome(hand_panel, "c", weights("d", [1.0]), ("d",)),
    }


@pytest.mark.unit
class TestImputation:
    def test_point_mass_reproduces_donor(self, hand_panel):
        cf = impute_control_outcome(hand_panel, "a", weights("de", [1.0, 0.0]), ("d", "e"))
        np.testing.assert_array_equal(cf.values, [2.0, 4.0])
        assert cf.periods == (3, 4)

    def test_equal_weights_average_donors(self, hand_counterfactuals):
        cf = hand_counterfactuals["a"]
        np.testing.assert_allclose(cf.values, [3.0, 6.0])
        assert cf.pre_period_rmspe == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(cf.fitted_pre_neighborhood, [2.0, 3.0])

    def test_misaligned_weights(self, hand_panel):
        with pytest.raises(EstimationError, match="misaligned"):
            impute_control_outcome(hand_panel, "a", weights("de", [0.5, 0.5]), ("d", "f"))


@pytest.mark.unit
class TestEstimands:
    def test_direct_effect(self, hand_panel, hand_counterfactuals):
        direct = direct_effect(hand_panel, hand_counterfactuals["a"])
        np.testing.assert_allclose(direct.values, [3.0, 3.0])
        np.testing.assert_allclose(direct.values + direct.imputed, direct.observed)

    def test_direct_effect_rejects_wrong_allocation(self, hand_panel):
        cf = impute_control_outcome(hand_panel, "a", weights("bc", [1.0, 0.0]), ("b", "c"),
                                    allocation=CONTROL_UNREALIZED)
        with pytest.raises(EstimationError, match="direct effect needs"):
            direct_effect(hand_panel, cf)

    def test_direct_effect_rejects_other_unit(self, hand_panel, hand_counterfactuals):
        with pytest.raises(EstimationError, match="treated unit"):
            direct_effect(hand_panel, hand_counterfactuals["b"])

    def test_spillovers_and_average(self, hand_panel, hand_counterfactuals):
        individual, average = spillover_effects(hand_panel, hand_counterfactuals)
        np.testing.assert_allclose(individual["b"].values, [1.0, 1.0])
        np.testing.assert_allclose(individual["c"].values, [3.0, 3.0])
        np.testing.assert_allclose(average.values, [2.0, 2.0])

    def test_missing_neighbor_counterfactual(self, hand_panel, hand_counterfactuals):
        del hand_counterfactuals["c"]
        with pytest.raises(EstimationError, match="missing neighbor counterfactual for c"):
            spillover_effects(hand_panel, hand_counterfactuals)

    def test_unrealized_and_net(self, hand_panel, hand_counterfactuals):
        cf_zero = hand_counterfactuals["a"]
        unrealized = unrealized_spillover(hand_panel, weights("bc", [1.0, 0.0]), cf_zero)
        np.testing.assert_allclose(unrealized.values, [0.0, -1.0])
        assert "assumption" in unrealized.metadata
        net = net_contrast(direct_effect(hand_panel, cf_zero), unrealized)
        np.testing.assert_allclose(net.values, [3.0, 4.0])

    def test_xi_must_cover_neighbors(self, hand_panel, hand_counterfactuals):
        with pytest.raises(EstimationError, match="xi misaligned"):
            unrealized_spillover(hand_panel, weights("b", [1.0]), hand_counterfactuals["a"])

    def test_net_contrast_period_mismatch(self, hand_panel, hand_counterfactuals):
        direct = direct_effect(hand_panel, hand_counterfactuals["a"])
        shifted = replace(direct, periods=(4, 5))
        with pytest.raises(EstimationError, match="different post-periods"):
            net_contrast(direct, shifted)

    def test_phase_means(self, hand_panel, hand_counterfactuals):
        unrealized = unrealized_spillover(hand_panel, weights("bc", [1.0, 0.0]),
                                          hand_counterfactuals["a"])
        assert phase_means(unrealized, {"early": (3, 3), "all": (3, 4)}) == {
            "early": 0.0, "all": -0.5,
        }
        with pytest.raises(EstimationError, match="covers no post-period"):
            phase_means(unrealized, {"late": (9, 10)})


@pytest.mark.unit
class TestBalanceTable:
    def test_shape_and_exact_fit(self, hand_panel, hand_counterfactuals):
        xi = impute_control_outcome(hand_panel, "a", weights("bc", [1.0, 0.0]), ("b", "c"),
                                    allocation=CONTROL_UNREALIZED)
        table = balance_table(hand_panel, hand_counterfactuals, xi)
        assert list(table.columns) == ["a", "b", "c", "unrealized"]
        assert list(table.index) == [("Street", 1), ("Street", 2),
                                     ("Neighbors", 1), ("Neighbors", 2)]
        np.testing.assert_allclose(table.loc["Street", "a"], [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(table.loc["Street", "unrealized"], [1.0, 1.0])
        assert table.loc["Neighbors", "unrealized"].isna().all()

    def test_missing_fit(self, hand_panel, hand_counterfactuals):
        del hand_counterfactuals["b"]
        with pytest.raises(EstimationError, match="missing fits for b"):
            balance_table(hand_panel, hand_counterfactuals)


@pytest.mark.unit
class TestDonorPools:
    def test_treated_unit_uses_controls_with_neighbors(self, small_panel):
        assert cross_cluster_donors(small_panel, "a") == ("d", "e", "f", "g", "h")

    def test_singleton_target_keeps_every_control(self, small_panel):
        assert cross_cluster_donors(small_panel, "i") == ("d", "e", "f", "g", "h")

    def test_own_cluster_excluded(self, small_panel):
        assert cross_cluster_donors(small_panel, "d") == ("g", "h")


@pytest.mark.unit
class TestEstimateEffects:
    PENALTIES = (0.05, 0.05, 0.5)

    def test_full_estimate_satisfies_identities(self, sim_panel):
        est = estimate_effects(sim_panel, *self.PENALTIES, outcome="y1")
        check_identities(est)
        assert set(est.spillovers) == set(sim_panel.treated_neighbors)
        assert est.xi is not None
        assert set(est.xi.donors_used) == set(sim_panel.treated_neighbors)
        assert set(est.by_estimand()) == {
            Estimand.DIRECT, Estimand.SPILLOVER_AVERAGE, Estimand.UNREALIZED, Estimand.NET_CONTRAST,
        }

    def test_frame_labels_individual_spillovers(self, sim_panel):
        frame = estimate_effects(sim_panel, *self.PENALTIES, outcome="y2").to_frame()
        assert "spillover_individual:u02" in set(frame["estimand"])
        assert list(frame.columns) == ["estimand", "variable", "period", "value"]

    def test_frame_appends_phase_means(self, sim_panel):
        est = estimate_effects(sim_panel, *self.PENALTIES, outcome="y1")
        phases = {"early": (3, 5), "late": (6, 10)}
        frame = est.to_frame(phases)
        assert len(frame) == len(est.to_frame()) + 2 * len(est.series())
        early = frame[(frame["estimand"] == "direct") & (frame["period"] == "early")]
        assert early["value"].iat[0] == pytest.approx(est.direct.values[:3].mean())
        late = frame[(frame["estimand"] == "spillover_individual:u02") & (frame["period"] == "late")]
        assert late["value"].iat[0] == pytest.approx(est.spillovers["u02"].values[3:].mean())

    def test_direct_only(self, sim_panel):
        est = estimate_effects(sim_panel, *self.PENALTIES, outcome="y1", direct_only=True)
        assert est.spillover_average is None
        assert est.series() == [est.direct]

    def test_post_period_shift_leaves_effects_unchanged(self, sim_panel):
        values = np.array(sim_panel.values)
        values[:, 0, sim_panel.n_pre:] += 5.0
        shifted = replace(sim_panel, values=values)
        base = estimate_effects(sim_panel, *self.PENALTIES, outcome="y1")
        moved = estimate_effects(shifted, *self.PENALTIES, outcome="y1")
        for a, b in zip(base.series(), moved.series()):
            np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_null_world_recovers_zero(self, sim_panel):
        base = estimate_effects(sim_panel, *self.PENALTIES, outcome="y1")
        values = np.array(sim_panel.values)
        values[0, 0, sim_panel.n_pre:] = base.direct.imputed
        null = replace(sim_panel, values=values)
        est = estimate_effects(null, *self.PENALTIES, outcome="y1")
        np.testing.assert_allclose(est.direct.values, 0.0, atol=1e-9)

    def test_unit_fit_contexts(self, small_panel):
        fits = unit_fit_rmspe(small_panel, "i", 0.1, 0.1, 0.5)
        assert np.isfinite(fits["treated"]) and np.isfinite(fits["neighbors"])
        assert np.isnan(fits["unrealized"])
        fits = unit_fit_rmspe(small_panel, "b", 0.1, 0.1, 0.5)
        assert all(np.isfinite(v) for v in fits.values())
