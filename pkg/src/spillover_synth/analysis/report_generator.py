#!/usr/bin/env python3
"""
Report Generator - Render estimation results on the console

Summarizes the panel, the selected penalties, the effect series and the
placebo p-values with rich tables.
"""

from typing import Iterable, List, Mapping, Optional, Tuple

import numpy as np
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..core.ingest import IngestReport
from ..core.panel import PanelDataset
from .effects import EffectEstimates, Estimand, phase_means
from .matching import MatchResult
from .penalty import PenaltyConfig
from .placebo import PlaceboRun, PlaceboSummary


def _fmt(value: float) -> str:
    if value is None or not np.isfinite(value):
        return "-"
    return f"{value:.6g}"


class ReportGenerator:
    """Generate formatted result reports."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def panel_summary(self, ds: PanelDataset, report: Optional[IngestReport] = None) -> None:
        summary = ds.summary()
        lines = [
            f"Treated unit: {ds.treated_unit} (cluster {ds.treated_cluster}, "
            f"{len(ds.treated_neighbors)} neighbors)",
            f"Units: {summary['units']}   Clusters: {summary['clusters']}   "
            f"Periods: {summary['periods']} ({summary['pre_periods']} pre, t0={ds.t0})",
            f"Outcomes: {', '.join(ds.outcomes)}",
            f"Covariates: {', '.join(ds.covariates) or 'none'}",
        ]
        if report is not None:
            lines.insert(0, f"Rows read: {report.rows:,}")
            if report.ignored_variables:
                lines.append(f"Ignored variables: {', '.join(report.ignored_variables)}")
        self.console.print(Panel("\n".join(lines), title="Panel", box=box.ROUNDED, style="blue"))

    def match_summary(self, matches: Mapping[str, MatchResult]) -> None:
        table = Table(title="Matched donor pools", box=box.SIMPLE_HEAVY)
        table.add_column("Outcome", style="cyan")
        table.add_column("Anchor")
        table.add_column("Matched controls")
        for outcome, result in matches.items():
            for anchor, match in result.sets.items():
                table.add_row(outcome, anchor, ", ".join(match.matched_units))
            table.add_row(outcome, "[bold]treated pool[/bold]", ", ".join(result.treated_pool))
            table.add_row(outcome, "[bold]neighbor pool[/bold]", ", ".join(result.neighbor_pool))
        self.console.print(table)

    def penalty_summary(self, penalties: Mapping[str, PenaltyConfig]) -> None:
        table = Table(title="Penalties", box=box.SIMPLE_HEAVY)
        table.add_column("Outcome", style="cyan")
        for name in ("lambda_treated", "lambda_neighbors", "lambda_star"):
            table.add_column(name, justify="right")
        table.add_column("Grid", style="dim")
        for outcome, p in penalties.items():
            star = _fmt(p.lambda_star) + (" [yellow](fallback)[/yellow]" if p.lambda_star_fallback else "")
            table.add_row(outcome, _fmt(p.lambda_treated), _fmt(p.lambda_neighbors), star, p.grid)
        self.console.print(table)

    def effect_summary(self, estimates: Mapping[str, EffectEstimates],
                       phases: Optional[Mapping[str, Tuple[int, int]]] = None) -> None:
        phases = phases or {}
        for outcome, est in estimates.items():
            series = est.series()
            table = Table(title=f"Effects: {outcome}", box=box.SIMPLE_HEAVY)
            table.add_column("Estimand", style="cyan")
            for t in est.direct.periods:
                table.add_column(str(t), justify="right")
            for name in phases:
                table.add_column(f"{name} mean", justify="right", style="bold")
            table.add_column("pre RMSPE", justify="right", style="dim")
            for s in series:
                if s.estimand is Estimand.SPILLOVER_INDIVIDUAL:
                    label = f"spillover {s.unit}"
                else:
                    label = s.estimand.value
                means = phase_means(s, phases) if phases else {}
                table.add_row(label, *(_fmt(v) for v in s.values),
                              *(_fmt(means[name]) for name in phases), _fmt(s.pre_period_rmspe))
            self.console.print(table)
            if est.unrealized is not None:
                self.console.print(f"[dim]unrealized: {est.unrealized.metadata['assumption']}[/dim]")

    def placebo_summary(self, summaries: Mapping[str, List[PlaceboSummary]],
                        runs: Optional[Mapping[str, Iterable[PlaceboRun]]] = None) -> None:
        for outcome, per_estimand in summaries.items():
            table = Table(title=f"Placebo p-values: {outcome}", box=box.SIMPLE_HEAVY)
            table.add_column("Estimand", style="cyan")
            table.add_column("Period")
            table.add_column("Actual", justify="right")
            table.add_column("Rank", justify="right")
            table.add_column("p", justify="right", style="bold")
            for summary in per_estimand:
                for p in [*summary.per_period, summary.aggregate, *summary.phases]:
                    table.add_row(summary.estimand.value, p.label, _fmt(p.actual),
                                  f"{p.rank}/{p.count}", f"{p.p_value:.3f}")
            self.console.print(table)
            if runs is not None and outcome in runs:
                excluded = [r for r in runs[outcome] if r.excluded]
                for run in excluded:
                    self.console.print(
                        f"[yellow]excluded[/yellow] {run.pseudo_treated}: {run.reason} "
                        f"(RMSPE {_fmt(run.filter_rmspe)})"
                    )

    def artifact_summary(self, paths: Iterable) -> None:
        table = Table(title="Artifacts", box=box.SIMPLE)
        table.add_column("File", style="green")
        for path in paths:
            table.add_row(str(path))
        self.console.print(table)
