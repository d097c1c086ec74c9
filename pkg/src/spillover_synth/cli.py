#!/usr/bin/env python3
"""
spillover-synth - Main CLI Entry Point

Batch front-end: validate a panel, match donors, cross-validate penalties,
estimate effects, run placebos, run everything, or simulate a panel.
"""

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import click
from pydantic import ValidationError
from rich.console import Console
from rich.traceback import install

from . import __version__
from .analysis.report_generator import ReportGenerator
from .core.config import ConfigError, ConfigManager, RunConfig
from .core.errors import SpilloverSynthError
from .core.ingest import emit_panel
from .core.pipeline import EstimationPipeline, RunResult
from .core.simulate import SimulationSpec, generate_synthetic_panel
from .core.user_config import UserConfig
from .exporters import ExportData, get_exporter
from .ui.console import ConsoleUI
from .utils.logger import get_logger, setup_logging

logger = get_logger(__name__)

install(show_locals=False)

console = Console()


def _parse_phase(value: str) -> Tuple[str, Tuple[int, int]]:
    try:
        name, _, window = value.partition("=")
        first, _, last = window.partition(":")
        return name.strip(), (int(first), int(last or first))
    except ValueError:
        raise click.BadParameter(f"expected NAME=FIRST:LAST, got {value!r}") from None


def run_options(func):
    """Flags shared by every command that reads a panel."""
    options = [
        click.option("--panel", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="Long-format panel CSV (unit_id,cluster_id,time,variable,value)"),
        click.option("--outcome", "outcomes", multiple=True,
                     help="Outcome variable (repeatable; default: every non-covariate)"),
        click.option("--covariate", "covariates", multiple=True,
                     help="Covariate variable (repeatable)"),
        click.option("--treated-unit", help="Id of the treated unit"),
        click.option("--t0", type=int, help="Last pre-treatment period label"),
        click.option("--match-count", "-m", type=int, help="Controls matched per unit and pre-period"),
        click.option("--grid-size", type=int, help="Number of candidate penalties on (0, 1]"),
        click.option("--grid-spacing", type=click.Choice(["uniform", "log"]),
                     help="Spacing of the penalty grid"),
        click.option("--lambda-treated", type=float, help="Fixed penalty for the treated unit"),
        click.option("--lambda-neighbors", type=float, help="Fixed penalty for its neighbors"),
        click.option("--lambda-star", type=float, help="Fixed within-cluster penalty"),
        click.option("--rmspe-threshold", type=str,
                     help="Exclude placebo runs with pre-period RMSPE above this ('inf' keeps all)"),
        click.option("--standardize/--no-standardize", default=None,
                     help="Divide features by their cross-unit standard deviation"),
        click.option("--include-treated-cluster/--exclude-treated-cluster", default=None,
                     help="Keep the true treated cluster as donors in placebo runs"),
        click.option("--check-uniqueness/--no-check-uniqueness", default=None,
                     help="Re-solve from a second start and warn on disagreement"),
        click.option("--phase", "phases", multiple=True,
                     help="Named post-period window NAME=FIRST:LAST (repeatable)"),
        click.option("--output-dir", "-o", type=click.Path(file_okay=False, path_type=Path),
                     help="Directory for result files"),
        click.option("--max-workers", type=int, help="Threads for CV and placebo runs"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(params: Dict[str, Any]) -> Dict[str, Any]:
    """Command-line values as RunConfig fields (unset flags omitted)."""
    out: Dict[str, Any] = {}
    for key in ("panel", "treated_unit", "t0", "match_count", "rmspe_threshold", "standardize",
                "include_treated_cluster", "check_uniqueness", "output_dir", "max_workers"):
        if params.get(key) is not None:
            out[key] = params[key]
    if params.get("outcomes"):
        out["outcomes"] = list(params["outcomes"])
    if params.get("covariates"):
        out["covariates"] = list(params["covariates"])
    if params.get("phases"):
        out["phases"] = dict(_parse_phase(v) for v in params["phases"])

    grid = {k: params[f"grid_{k}"] for k in ("size", "spacing") if params.get(f"grid_{k}") is not None}
    if grid:
        out["grid"] = grid

    names = ("lambda_treated", "lambda_neighbors", "lambda_star")
    given = {n: params[n] for n in names if params.get(n) is not None}
    if given and len(given) != len(names):
        raise click.UsageError("--lambda-treated, --lambda-neighbors and --lambda-star go together")
    if given:
        out["penalties"] = given
    return out


def _build_config(ctx, params: Dict[str, Any]) -> RunConfig:
    manager = ConfigManager(ctx.obj["user_config"])
    return manager.build(ctx.obj["config_file"], _overrides(params))


@contextmanager
def _guard(ctx, command: str):
    ui: ConsoleUI = ctx.obj["console"]
    try:
        yield
    except SpilloverSynthError as e:
        ui.error(str(e))
        logger.exception("%s command failed", command)
        ctx.exit(1)


@click.group()
@click.option("--config", "-c", "config_file",
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Run configuration file (TOML or JSON)")
@click.option("--verbose", "-v", count=True, help="Increase verbosity (-v, -vv)")
@click.option("--quiet", "-q", is_flag=True, help="Suppress all output except errors")
@click.option("--log-file", type=click.Path(dir_okay=False, path_type=Path),
              help="Also write log records to this file")
@click.option("--user-config", type=click.Path(dir_okay=False, path_type=Path), hidden=True)
@click.version_option(__version__, prog_name="spsynth")
@click.pass_context
def cli(ctx, config_file: Optional[Path], verbose: int, quiet: bool,
        log_file: Optional[Path], user_config: Optional[Path]):
    """spillover-synth - penalized synthetic control under partial interference.

    Estimates the direct effect on a single treated unit, the spillover on the
    other units of its cluster, and the spillover it would have received had a
    neighbor been treated instead, with in-space placebo inference.

    \b
    Typical use:
      spsynth simulate -o demo             # write a demo panel
      spsynth run --panel demo/panel.csv --treated-unit u01 --t0 2 -o results
    """
    log_level = "ERROR" if quiet else ["WARNING", "INFO", "DEBUG"][min(verbose, 2)]
    setup_logging(log_level, log_file)

    ctx.ensure_object(dict)
    ctx.obj["config_file"] = config_file
    ctx.obj["console"] = ConsoleUI(quiet=quiet)
    ctx.obj["quiet"] = quiet
    try:
        ctx.obj["user_config"] = UserConfig(user_config)
    except SpilloverSynthError as e:
        ctx.obj["console"].error(str(e))
        ctx.exit(1)


def _pipeline(ctx, params) -> Tuple[EstimationPipeline, RunResult, ReportGenerator]:
    ui: ConsoleUI = ctx.obj["console"]
    config = _build_config(ctx, params)
    pipeline = EstimationPipeline(config, progress=ui.step)
    result = pipeline.load()
    report = ReportGenerator(ui.console)
    return pipeline, result, report


def _export_table(table, path: Path, index: bool = False) -> Path:
    return get_exporter("csv").export(ExportData(table), path, index=index)


@cli.command()
@run_options
@click.pass_context
def validate(ctx, **params):
    """Check a panel file and report its structure."""
    with _guard(ctx, "validate"):
        _, result, report = _pipeline(ctx, params)
        report.panel_summary(result.dataset, result.report)
        ctx.obj["console"].success("Panel is valid")


@cli.command()
@run_options
@click.pass_context
def match(ctx, **params):
    """Match treated-cluster units to their nearest controls."""
    with _guard(ctx, "match"):
        pipeline, result, report = _pipeline(ctx, params)
        pipeline.match(result)
        report.match_summary(result.matches)


@cli.command()
@run_options
@click.pass_context
def cv(ctx, **params):
    """Select the three penalties by leave-one-out cross-validation."""
    with _guard(ctx, "cv"):
        pipeline, result, report = _pipeline(ctx, params)
        with ctx.obj["console"].status("Cross-validating penalties"):
            pipeline.select(result)
        report.penalty_summary(result.penalties)
        for outcome, cv_report in result.cv_reports.items():
            path = Path(pipeline.config.output_dir) / f"cv_report_{outcome}.csv"
            _export_table(cv_report.to_frame(), path)
            _export_table(cv_report.residual_frame(),
                          Path(pipeline.config.output_dir) / f"cv_residuals_{outcome}.csv")
            ctx.obj["console"].info(f"CV curves written to {path}")


@cli.command()
@run_options
@click.pass_context
def estimate(ctx, **params):
    """Estimate direct, spillover and unrealized spillover effects."""
    with _guard(ctx, "estimate"):
        pipeline, result, report = _pipeline(ctx, params)
        pipeline.estimate(result)
        report.penalty_summary(result.penalties)
        report.effect_summary(result.estimates, pipeline.config.phases)


@cli.command()
@run_options
@click.pass_context
def placebo(ctx, **params):
    """Run in-space placebos and report rank-based p-values."""
    with _guard(ctx, "placebo"):
        pipeline, result, report = _pipeline(ctx, params)
        pipeline.placebo(result)
        report.placebo_summary(result.summaries, result.placebos)


@cli.command()
@run_options
@click.pass_context
def run(ctx, **params):
    """Run the full pipeline and write every artifact."""
    ui: ConsoleUI = ctx.obj["console"]
    with _guard(ctx, "run"):
        config = _build_config(ctx, params)
        with ui.status("Running the estimation pipeline"):
            result = EstimationPipeline(config, progress=ui.step).run()
        report = ReportGenerator(ui.console)
        report.penalty_summary(result.penalties)
        report.effect_summary(result.estimates, config.phases)
        report.placebo_summary(result.summaries, result.placebos)
        report.artifact_summary(result.artifacts)
        ui.success(f"Wrote {len(result.artifacts)} files to {config.output_dir}")


def _int_list(ctx, param, value: Optional[str]):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers") from None


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True, help="Random seed")
@click.option("--clusters", callback=_int_list,
              help="Comma-separated cluster sizes, treated cluster first")
@click.option("--periods", type=int, help="Number of periods")
@click.option("--t0", type=int, help="Last pre-treatment period")
@click.option("--direct", "direct_effect", type=float, help="Injected direct effect")
@click.option("--spillover", "spillover_effect", type=float, help="Injected spillover on neighbors")
@click.option("--noise", type=float, help="Idiosyncratic noise standard deviation")
@click.option("--spread", "treated_loading_spread", type=float,
              help="Treated-cluster loading spread around the control mean")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False, path_type=Path),
              default=Path("."), show_default=True)
@click.pass_context
def simulate(ctx, seed: int, clusters, periods, t0, direct_effect, spillover_effect, noise,
             treated_loading_spread, output_dir: Path):
    """Write a simulated panel (panel.csv) and its ground truth (truth.csv)."""
    ui: ConsoleUI = ctx.obj["console"]
    values = {
        "cluster_sizes": clusters, "n_periods": periods, "t0": t0,
        "direct_effect": direct_effect, "spillover_effect": spillover_effect,
        "noise": noise, "treated_loading_spread": treated_loading_spread,
    }
    with _guard(ctx, "simulate"):
        try:
            spec = SimulationSpec(**{k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise ConfigError(f"Invalid simulation settings: {e}") from e
        sim = generate_synthetic_panel(spec, seed)
        panel_path = emit_panel(sim.dataset, output_dir / "panel.csv")
        truth_path = _export_table(sim.truth.to_frame(), output_dir / "truth.csv")
        ui.success(f"Simulated panel written to {panel_path}")
        ui.info(f"Ground truth written to {truth_path}; treated unit {sim.dataset.treated_unit}, "
                f"t0={sim.dataset.t0}")


@cli.group()
def config():
    """Show, create or edit the per-user defaults file."""


@config.command("show")
@click.pass_context
def config_show(ctx):
    """Print the effective defaults and where they come from."""
    ui: ConsoleUI = ctx.obj["console"]
    user_config: UserConfig = ctx.obj["user_config"]
    with _guard(ctx, "config show"):
        effective = ConfigManager(user_config).build(ctx.obj["config_file"])
        ui.info(f"User defaults file: {user_config.path}"
                + ("" if user_config.path.exists() else " (not created)"))
        ui.display_mapping("Effective configuration", effective.echo())


@config.command("init")
@click.option("--force", is_flag=True, help="Overwrite an existing file")
@click.pass_context
def config_init(ctx, force: bool):
    """Create the per-user defaults file with commented defaults."""
    ui: ConsoleUI = ctx.obj["console"]
    user_config: UserConfig = ctx.obj["user_config"]
    if user_config.path.exists() and not force:
        ui.warning(f"{user_config.path} already exists. Use --force to overwrite.")
        return
    user_config.init_default()
    ui.success(f"Wrote {user_config.path}")


@config.command("set")
@click.argument("key")
@click.argument("value")
@click.pass_context
def config_set(ctx, key: str, value: str):
    """Store one default (e.g. match_count 7) in the per-user file."""
    ui: ConsoleUI = ctx.obj["console"]
    user_config: UserConfig = ctx.obj["user_config"]
    with _guard(ctx, "config set"):
        user_config.set(key, value)
        user_config.save()
        ui.success(f"Set {key} in {user_config.path}")


def main(argv: Optional[Sequence[str]] = None):
    """Main entry point for the CLI application."""
    try:
        cli(args=argv)
    except Exception as e:
        console.print(f"[red]Unexpected error: {e}[/red]")
        if "--verbose" in sys.argv or "-v" in sys.argv:
            console.print_exception()
        sys.exit(1)


if __name__ == "__main__":
    main()
