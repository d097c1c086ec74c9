"""Unit tests for layered run configuration."""

import json
import math

import pytest

from spillover_synth.core.config import (
    ConfigError,
    ConfigManager,
    RunConfig,
    load_config,
    load_config_file,
)
from spillover_synth.core.user_config import UserConfig


@pytest.fixture
def user_config(tmp_path):
    return UserConfig(config_path=tmp_path / "user.toml")


@pytest.mark.unit
class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.match_count == 5
        assert config.grid.size == 10_000
        assert config.penalties is None
        assert config.rmspe_threshold == 1.0

    def test_infinite_threshold(self):
        config = RunConfig(rmspe_threshold="inf")
        assert math.isinf(config.rmspe_threshold)
        assert config.echo()["rmspe_threshold"] == "inf"

    def test_comma_separated_names(self):
        config = RunConfig(outcomes="y1, y2")
        assert config.outcomes == ["y1", "y2"]

    def test_outcome_and_covariate_overlap(self):
        with pytest.raises(ValueError, match="both outcome and covariate"):
            RunConfig(outcomes=["y"], covariates=["y"])

    def test_penalty_out_of_range(self):
        with pytest.raises(ValueError):
            RunConfig(penalties={"lambda_treated": 0.0, "lambda_neighbors": 0.5, "lambda_star": 0.5})

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            RunConfig(match_cnt=3)

    def test_require_panel(self):
        with pytest.raises(ConfigError, match="treated_unit, t0"):
            RunConfig(panel="p.csv").require_panel()

    def test_phase_outside_post_period(self):
        config = RunConfig(t0=2, phases={"late": (9, 12)})
        with pytest.raises(ConfigError, match="outside the post-period"):
            config.check_against((1, 2, 3, 4))

    def test_reserved_phase_name(self):
        with pytest.raises(ValueError, match="reserved"):
            RunConfig(phases={"all": (3, 5)})

    def test_reversed_phase(self):
        with pytest.raises(ValueError, match="starts after it ends"):
            RunConfig(phases={"p": (5, 3)})


@pytest.mark.unit
class TestConfigFiles:
    def test_toml_run_table_and_relative_panel(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('''
[run]
panel = "data/panel.csv"
treated_unit = "u01"
t0 = 2
match_count = 3

[grid]
size = 50
''')
        data = load_config_file(path)
        assert data["panel"] == str((tmp_path / "data" / "panel.csv").resolve())
        assert data["match_count"] == 3
        assert data["grid"] == {"size": 50}

    def test_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"treated_unit": "u07", "t0": 4}))
        assert load_config_file(path) == {"treated_unit": "u07", "t0": 4}

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("t0 = = 2")
        with pytest.raises(ConfigError, match="Invalid configuration file"):
            load_config_file(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot read"):
            load_config_file(tmp_path / "missing.toml")


@pytest.mark.unit
class TestPrecedence:
    def test_user_defaults_then_file_then_flags(self, tmp_path):
        user_path = tmp_path / "user.toml"
        user_path.write_text("[run]\nmatch_count = 7\nmax_workers = 2\n\n[grid]\nsize = 300\n")
        run_file = tmp_path / "run.toml"
        run_file.write_text("match_count = 4\n[grid]\nspacing = \"log\"\n")

        config = ConfigManager(UserConfig(user_path)).build(run_file, {"max_workers": 6, "t0": None})
        assert config.match_count == 4
        assert config.max_workers == 6
        assert config.grid.size == 300
        assert config.grid.spacing == "log"
        assert config.t0 is None

    def test_validation_error_names_source(self, user_config, tmp_path):
        run_file = tmp_path / "run.toml"
        run_file.write_text("match_count = 0\n")
        with pytest.raises(ConfigError, match="run.toml"):
            load_config(run_file, user_config=user_config)

    def test_fixed_penalties_from_flags(self, user_config):
        penalties = {"lambda_treated": 0.2, "lambda_neighbors": 0.3, "lambda_star": 0.4}
        config = load_config(overrides={"penalties": penalties}, user_config=user_config)
        assert config.penalties.lambda_star == 0.4
