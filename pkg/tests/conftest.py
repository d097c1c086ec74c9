"""
Pytest configuration and shared fixtures for spillover-synth tests
"""

import pytest
import sys
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from spillover_synth.core.panel import PanelDataset, UnitRecord  # noqa: E402
from spillover_synth.core.simulate import SimulationSpec, generate_synthetic_panel  # noqa: E402
from spillover_synth.core.ingest import emit_panel  # noqa: E402


# ============================================================================
# Panel builders
# ============================================================================

def build_panel(data: Mapping[Tuple[str, str], Mapping[str, Sequence[float]]],
                treated: str, t0: int, times: Optional[Sequence[int]] = None,
                outcomes: Sequence[str] = ("y",), covariates: Sequence[str] = ()) -> PanelDataset:
    """Panel from ``{(unit, cluster): {variable: series}}``, insertion order kept."""
    variables = tuple(outcomes) + tuple(covariates)
    first = next(iter(data.values()))
    n_times = len(first[variables[0]])
    times = tuple(times) if times is not None else tuple(range(1, n_times + 1))
    values = np.array([
        [np.asarray(series[v], dtype=float) for v in variables]
        for series in data.values()
    ])
    return PanelDataset(
        units=tuple(UnitRecord(u, c) for u, c in data),
        times=times,
        t0=t0,
        variables=variables,
        values=values,
        treated_unit=treated,
        outcomes=tuple(outcomes),
        covariates=tuple(covariates),
    )


def constant_series(level: float, n: int = 4) -> Dict[str, list]:
    return {"y": [level] * n}


# ============================================================================
# Panel fixtures
# ============================================================================

@pytest.fixture
def small_panel():
    """Treated cluster {a, b, c}, controls in {d, e, f}, {g, h} and singleton {i}."""
    rng = np.random.default_rng(7)
    layout = [("a", "c1"), ("b", "c1"), ("c", "c1"),
              ("d", "c2"), ("e", "c2"), ("f", "c2"),
              ("g", "c3"), ("h", "c3"), ("i", "c4")]
    data = {
        key: {"y": (10 + k + rng.normal(0, 0.3, 5)).tolist(),
              "x": (2 + 0.5 * k + rng.normal(0, 0.2, 5)).tolist()}
        for k, key in enumerate(layout)
    }
    return build_panel(data, treated="a", t0=2, outcomes=("y",), covariates=("x",))


@pytest.fixture
def twin_panel():
    """Every control cluster has an exact twin cluster, so a twin reproduces a unit."""
    base = {"d": [1.0, 2.0, 3.0, 4.0, 5.0],
            "e": [2.0, 1.5, 2.5, 3.0, 2.0],
            "f": [3.0, 3.5, 1.0, 2.0, 4.0]}
    data = {
        ("a", "c1"): {"y": [2.0, 2.2, 2.4, 2.6, 2.8]},
        ("b", "c1"): {"y": [1.5, 1.6, 2.0, 2.1, 2.5]},
        ("c", "c1"): {"y": [1.5, 1.6, 2.0, 2.1, 2.5]},
    }
    for unit, series in base.items():
        data[(unit, "c2")] = {"y": series}
    for unit, twin in zip(("g", "h", "i"), base):
        data[(unit, "c3")] = {"y": list(base[twin])}
    return build_panel(data, treated="a", t0=2)


@pytest.fixture
def sim_spec():
    return SimulationSpec()


@pytest.fixture
def simulated(sim_spec):
    return generate_synthetic_panel(sim_spec, seed=3)


@pytest.fixture
def sim_panel(simulated):
    return simulated.dataset


# ============================================================================
# Files and configuration
# ============================================================================

@pytest.fixture
def panel_csv(tmp_path, sim_panel):
    """Simulated panel written as a long-format CSV."""
    return emit_panel(sim_panel, tmp_path / "panel.csv")


@pytest.fixture
def user_config_path(tmp_path):
    """Path for an isolated per-user defaults file (never the real one)."""
    return tmp_path / "user" / "config.toml"


def write_rows(path: Path, rows: Sequence[str],
               header: str = "unit_id,cluster_id,time,variable,value") -> Path:
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path
