"""Per-user TOML defaults for spillover-synth runs."""

import sys
from pathlib import Path
from typing import Any, Dict, Optional

from platformdirs import user_config_dir

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import SpilloverSynthError

APP_NAME = "spillover-synth"
CONFIG_DIR = Path(user_config_dir(APP_NAME))
CONFIG_PATH = CONFIG_DIR / "config.toml"

DEFAULTS = {
    "match_count": 5,
    "rmspe_threshold": 1.0,
    "standardize": False,
    "max_workers": 1,
    "grid_size": 10_000,
    "grid_spacing": "uniform",
    "output_dir": "",
}

DEFAULT_TOML = """\
# spillover-synth defaults

[run]
# Controls matched to each treated-cluster unit per pre-period
match_count = 5

# Placebo runs whose pre-period RMSPE exceeds this are excluded
rmspe_threshold = 1.0

# Divide every feature by its cross-unit standard deviation
standardize = false

# Threads for cross-validation and placebo runs
max_workers = 1

# Default output directory (empty: ./spsynth-output)
output_dir = ""

[grid]
# Candidate penalties on (0, 1]
size = 10000
spacing = "uniform"
"""


class UserConfig:
    def __init__(self, config_path: Optional[Path] = None):
        self.path = config_path or CONFIG_PATH
        self._data: Dict[str, Any] = {}
        self.load()

    def load(self) -> None:
        self._data = dict(DEFAULTS)
        if not self.path.exists():
            return
        try:
            parsed = tomllib.loads(self.path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise SpilloverSynthError(f"Invalid user configuration {self.path}: {e}") from e
        run = parsed.get("run", {})
        grid = parsed.get("grid", {})

        if "match_count" in run:
            self._data["match_count"] = int(run["match_count"])
        if "rmspe_threshold" in run:
            self._data["rmspe_threshold"] = float(run["rmspe_threshold"])
        if "standardize" in run:
            self._data["standardize"] = bool(run["standardize"])
        if "max_workers" in run:
            self._data["max_workers"] = int(run["max_workers"])
        if "output_dir" in run:
            self._data["output_dir"] = str(run["output_dir"])
        if "size" in grid:
            self._data["grid_size"] = int(grid["size"])
        if "spacing" in grid:
            self._data["grid_spacing"] = str(grid["spacing"])

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            "# spillover-synth defaults\n",
            "[run]",
            f"match_count = {self._data['match_count']}",
            f"rmspe_threshold = {self._data['rmspe_threshold']!r}",
            f"standardize = {'true' if self._data['standardize'] else 'false'}",
            f"max_workers = {self._data['max_workers']}",
            f'output_dir = "{self._data["output_dir"]}"',
            "",
            "[grid]",
            f"size = {self._data['grid_size']}",
            f'spacing = "{self._data["grid_spacing"]}"',
        ]
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def set(self, key: str, value: Any) -> None:
        """Store one setting, converting strings to the setting's type."""
        if key not in DEFAULTS:
            known = ", ".join(sorted(DEFAULTS))
            raise SpilloverSynthError(f"Unknown setting {key!r}; known settings: {known}")
        kind = type(DEFAULTS[key])
        try:
            if kind is bool and isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "false"):
                    raise ValueError(f"expected true or false, got {value!r}")
                value = lowered == "true"
            else:
                value = kind(value)
        except (TypeError, ValueError) as e:
            raise SpilloverSynthError(f"Invalid value for {key}: {e}") from e
        if key == "grid_spacing" and value not in ("uniform", "log"):
            raise SpilloverSynthError(f"Invalid value for grid_spacing: {value!r}")
        self._data[key] = value

    def init_default(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(DEFAULT_TOML, encoding="utf-8")

    def run_defaults(self) -> Dict[str, Any]:
        """The stored defaults as RunConfig fields."""
        data = {
            "match_count": self.match_count,
            "rmspe_threshold": self.rmspe_threshold,
            "standardize": self.standardize,
            "max_workers": self.max_workers,
            "grid": {"size": self.grid_size, "spacing": self.grid_spacing},
        }
        if self._data["output_dir"]:
            data["output_dir"] = self._data["output_dir"]
        return data

    @property
    def match_count(self) -> int:
        return self._data["match_count"]

    @property
    def rmspe_threshold(self) -> float:
        return self._data["rmspe_threshold"]

    @property
    def standardize(self) -> bool:
        return self._data["standardize"]

    @property
    def max_workers(self) -> int:
        return self._data["max_workers"]

    @property
    def grid_size(self) -> int:
        return self._data["grid_size"]

    @property
    def grid_spacing(self) -> str:
        return self._data["grid_spacing"]
