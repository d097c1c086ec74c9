#!/usr/bin/env python3
"""
Estimation Pipeline

Runs ingestion, matching, penalty selection, effect estimation, fit
diagnostics and placebo inference for every outcome variable, and writes the
result artifacts. Files written by a failing run are removed.
"""

import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from .. import __version__
from ..analysis.effects import EffectEstimates, estimate_effects, unit_fit_rmspe
from ..analysis.matching import MatchResult, build_match_sets
from ..analysis.penalty import CvReport, PenaltyConfig, PenaltyGrid, make_grid, select_penalties
from ..analysis.placebo import (
    PlaceboRun,
    PlaceboSummary,
    filter_by_rmspe,
    placebo_frame,
    run_placebos,
    summarize_all,
)
from ..analysis.solver import SolverOptions
from ..analysis.tables import (
    flatten_columns,
    penalties_table,
    rmspe_table,
    stacked_balance_table,
    stacked_weights_table,
)
from ..exporters import ExportData, get_exporter
from ..utils.logger import get_logger
from .config import RunConfig
from .ingest import IngestReport, ingest_panel_with_report
from .panel import PanelDataset

logger = get_logger(__name__)

CORE_ARTIFACTS = (
    "weights.csv",
    "balance.csv",
    "penalties.csv",
    "rmspe.csv",
    "effects.csv",
    "placebo.csv",
    "manifest.json",
)

ProgressCallback = Callable[[str], None]


@dataclass(eq=False)
class RunResult:
    dataset: PanelDataset
    report: IngestReport
    matches: Dict[str, MatchResult] = field(default_factory=dict)
    penalties: Dict[str, PenaltyConfig] = field(default_factory=dict)
    cv_reports: Dict[str, CvReport] = field(default_factory=dict)
    estimates: Dict[str, EffectEstimates] = field(default_factory=dict)
    fits: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    placebos: Dict[str, List[PlaceboRun]] = field(default_factory=dict)
    summaries: Dict[str, List[PlaceboSummary]] = field(default_factory=dict)
    artifacts: List[Path] = field(default_factory=list)


class EstimationPipeline:
    """End-to-end estimation for one run configuration."""

    def __init__(self, config: RunConfig, progress: Optional[ProgressCallback] = None):
        self.config = config
        self.progress = progress or (lambda message: None)
        self.options = SolverOptions(check_uniqueness=config.check_uniqueness)
        self._written: List[Path] = []

    # -- stages ------------------------------------------------------------

    def load(self) -> RunResult:
        path, treated_unit, t0 = self.config.require_panel()
        self.progress(f"Reading {path}")
        ds, report = ingest_panel_with_report(
            path,
            treated_unit=treated_unit,
            t0=t0,
            outcomes=self.config.outcomes or None,
            covariates=self.config.covariates,
        )
        self.config.check_against(ds.times)
        return RunResult(dataset=ds, report=report)

    @property
    def grid(self) -> PenaltyGrid:
        spec = self.config.grid
        return make_grid(spec.size, spec.spacing, spec.lower)

    def match(self, result: RunResult) -> None:
        for outcome in result.dataset.outcomes:
            self.progress(f"Matching donors for {outcome}")
            result.matches[outcome] = build_match_sets(
                result.dataset, self.config.match_count, outcome
            )

    def select(self, result: RunResult) -> None:
        fixed = self.config.penalties
        for outcome in result.dataset.outcomes:
            if fixed is not None:
                result.penalties[outcome] = PenaltyConfig(
                    lambda_treated=fixed.lambda_treated,
                    lambda_neighbors=fixed.lambda_neighbors,
                    lambda_star=fixed.lambda_star,
                    grid_size=1,
                    grid="fixed",
                )
                continue
            if outcome not in result.matches:
                self.match(result)
            self.progress(f"Cross-validating penalties for {outcome}")
            penalties, report = select_penalties(
                result.dataset,
                result.matches[outcome],
                self.grid,
                outcome=outcome,
                standardize=self.config.standardize,
                options=self.options,
                max_workers=self.config.max_workers,
            )
            result.penalties[outcome] = penalties
            result.cv_reports[outcome] = report

    def estimate(self, result: RunResult) -> None:
        if not result.penalties:
            self.select(result)
        ds = result.dataset
        for outcome in ds.outcomes:
            p = result.penalties[outcome]
            self.progress(f"Estimating effects for {outcome}")
            result.estimates[outcome] = estimate_effects(
                ds, p.lambda_treated, p.lambda_neighbors, p.lambda_star,
                outcome=outcome, standardize=self.config.standardize, options=self.options,
            )
            result.fits[outcome] = {
                unit: unit_fit_rmspe(
                    ds, unit, p.lambda_treated, p.lambda_neighbors, p.lambda_star,
                    outcome=outcome, standardize=self.config.standardize, options=self.options,
                )
                for unit in ds.unit_ids
            }

    def placebo(self, result: RunResult) -> None:
        if not result.estimates:
            self.estimate(result)
        for outcome in result.dataset.outcomes:
            self.progress(f"Running placebos for {outcome}")
            runs = run_placebos(
                result.dataset,
                result.penalties[outcome],
                outcome=outcome,
                include_treated_cluster=self.config.include_treated_cluster,
                standardize=self.config.standardize,
                options=self.options,
                max_workers=self.config.max_workers,
            )
            runs = filter_by_rmspe(runs, self.config.rmspe_threshold)
            excluded = [r.pseudo_treated for r in runs if r.excluded]
            if excluded:
                logger.warning("%s: %d placebo run(s) excluded: %s",
                               outcome, len(excluded), ", ".join(excluded))
            result.placebos[outcome] = runs
            result.summaries[outcome] = summarize_all(
                result.estimates[outcome], runs, self.config.phases
            )

    # -- artifacts ---------------------------------------------------------

    def _write_csv(self, table: pd.DataFrame, name: str, index: bool = True) -> Path:
        path = Path(self.config.output_dir) / name
        self._written.append(path)
        return get_exporter("csv").export(ExportData(table), path, index=index)

    def _write_json(self, metadata: Dict, name: str) -> Path:
        path = Path(self.config.output_dir) / name
        self._written.append(path)
        return get_exporter("json").export(ExportData(metadata=metadata), path)

    def manifest(self, result: RunResult) -> Dict:
        return {
            "config": self.config.echo(),
            "seed": self.config.seed,
            "versions": {
                "spillover_synth": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "python": platform.python_version(),
            },
            "panel": {
                "rows": result.report.rows,
                "units": result.report.units,
                "clusters": result.report.clusters,
                "periods": result.report.periods,
                "ignored_variables": result.report.ignored_variables,
            },
            "penalties": {
                outcome: {
                    "lambda_treated": p.lambda_treated,
                    "lambda_neighbors": p.lambda_neighbors,
                    "lambda_star": p.lambda_star,
                    "grid": p.grid,
                    "grid_size": p.grid_size,
                    "lambda_star_fallback": p.lambda_star_fallback,
                }
                for outcome, p in result.penalties.items()
            },
            "artifacts": sorted({p.name for p in self._written} | {"manifest.json"}),
        }

    def write(self, result: RunResult) -> List[Path]:
        ds = result.dataset
        paths = [
            self._write_csv(stacked_weights_table(ds, result.estimates), "weights.csv"),
            self._write_csv(stacked_balance_table(ds, result.estimates), "balance.csv"),
            self._write_csv(penalties_table(result.penalties), "penalties.csv"),
            self._write_csv(flatten_columns(rmspe_table(ds.unit_ids, result.fits)), "rmspe.csv"),
            self._write_csv(
                pd.concat([e.to_frame(self.config.phases) for e in result.estimates.values()],
                          ignore_index=True),
                "effects.csv", index=False,
            ),
            self._write_csv(
                pd.concat([placebo_frame(r) for r in result.placebos.values()], ignore_index=True),
                "placebo.csv", index=False,
            ),
        ]
        summaries = [s.to_frame() for per in result.summaries.values() for s in per]
        if summaries:
            paths.append(self._write_csv(pd.concat(summaries, ignore_index=True),
                                         "placebo_summary.csv", index=False))
        if result.cv_reports:
            cv = pd.concat(
                {v: r.to_frame() for v, r in result.cv_reports.items()}, names=["variable", "row"]
            ).reset_index(level="row", drop=True).reset_index()
            paths.append(self._write_csv(cv, "cv_report.csv", index=False))
            residuals = pd.concat(
                {v: r.residual_frame() for v, r in result.cv_reports.items()}, names=["variable", "row"]
            ).reset_index(level="row", drop=True).reset_index()
            paths.append(self._write_csv(residuals, "cv_residuals.csv", index=False))
        paths.append(self._write_json(self.manifest(result), "manifest.json"))
        return paths

    def cleanup(self) -> None:
        for path in self._written:
            try:
                path.unlink()
            except FileNotFoundError:
                pass
            except OSError as e:
                logger.warning("Could not remove partial artifact %s: %s", path, e)
        self._written.clear()

    def run(self) -> RunResult:
        """Every stage and every artifact; partial artifacts are removed on failure."""
        self._written = []
        try:
            result = self.load()
            self.match(result)
            self.select(result)
            self.estimate(result)
            self.placebo(result)
            result.artifacts = self.write(result)
        except Exception:
            self.cleanup()
            raise
        logger.info("Wrote %d artifacts to %s", len(result.artifacts), self.config.output_dir)
        return result


def run_pipeline(config: RunConfig, progress: Optional[ProgressCallback] = None) -> RunResult:
    return EstimationPipeline(config, progress).run()
