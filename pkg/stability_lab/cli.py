#!/usr/bin/env python3
"""
stability_lab/cli.py
Command line front door: bounds reports, convergence studies, oracle suites.

Exit codes: 0 ok, 1 violated bound or failed oracle, 2 configuration
error, 3 budget exceeded. Inapplicable bounds are not failures.
"""

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import click
import pandas as pd
import structlog

from monitoring.budget_guard import BudgetGuard, work_units
from monitoring.otel_helpers import get_global_instrumentor, shutdown_otel
from monitoring.run_ledger import log_run
from stability_lab import oracles
from stability_lab.config import MAX_SEED, ExperimentConfig, load_config
from stability_lab.errors import BudgetExceededError, ConfigError, LabError
from stability_lab.experiments import run_bounds_report, run_convergence_study
from stability_lab.logging_setup import configure_logging
from stability_lab.serialization import write_csv

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3

SE_SLACK = 3.0


class StudyFailed(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@contextmanager
def _mapped_errors():
    """Translate lab exceptions into exit codes"""
    try:
        yield
    except BudgetExceededError as e:
        raise StudyFailed(EXIT_BUDGET, str(e)) from e
    except LabError as e:
        raise StudyFailed(EXIT_CONFIG, str(e)) from e


def _record(study: str, config: Optional[ExperimentConfig], units: int, start: float, outcome: str) -> None:
    try:
        log_run(
            study=study,
            config_digest=config.digest() if config is not None else "",
            scenario=config.scenario if config is not None else study,
            work_units=units,
            elapsed_ms=int((time.time() - start) * 1000),
            outcome=outcome,
        )
    except OSError as e:
        logger.warning("ledger.write_failed", error=str(e))


def _finish(ctx: click.Context, study: str, config: Optional[ExperimentConfig], units: int,
            start: float, code: int, message: str = "") -> None:
    outcome = {EXIT_OK: "ok", EXIT_VIOLATION: "violation", EXIT_CONFIG: "config-error",
               EXIT_BUDGET: "budget-exceeded"}[code]
    _record(study, config, units, start, outcome)
    if message:
        click.echo(f"❌ {message}", err=True)
    ctx.exit(code)


def out_option(func):
    return click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                        help="Output directory (overrides output_dir in the config)")(func)


def seed_option(func):
    return click.option("--seed", type=click.IntRange(0, MAX_SEED), default=None,
                        help="Master seed, overrides estimator.seed")(func)


def jobs_option(func):
    return click.option("--jobs", "-j", type=click.IntRange(min=1), default=1, show_default=True,
                        help="Worker processes; results do not depend on it")(func)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging to stderr")
@click.option("--budget-config", type=click.Path(dir_okay=False), default=None,
              help="Budget YAML (default: LAB_BUDGET_CONFIG or monitoring/budget_config.yaml)")
@click.pass_context
def cli(ctx, verbose, budget_config):
    """Stability bounds lab for posteriors with intractable normalizing functions."""
    configure_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["budget_config"] = budget_config
    ctx.call_on_close(shutdown_otel)


def _guard(ctx: click.Context) -> BudgetGuard:
    return BudgetGuard(ctx.obj.get("budget_config"))


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@out_option
@click.pass_context
def bounds(ctx, config_path, out_dir):
    """Evaluate deterministic bounds for an explicit (Z, Z_tilde) pair."""
    start, config, units = time.time(), None, 0
    instrumentor = get_global_instrumentor()
    try:
        with instrumentor.instrument_operation("bounds_report", "bounds") as op, _mapped_errors():
            config = load_config(config_path)
            guard = _guard(ctx)
            units = len(config.grid.nodes) if config.grid.nodes is not None else int(config.grid.n or 0)
            guard.check_grid(units)
            if config.grid.metric.type == "truncated":
                guard.check_transport_nodes(units)
            op.set_study_info({"scenario": config.scenario, "n": units})

            report, path = run_bounds_report(config, out_dir)
            violations = report.violations()
            op.set_outcome_info({"entries": report.entries, "violations": violations})
    except StudyFailed as e:
        _finish(ctx, "bounds", config, units, start, e.code, str(e))
        return

    click.echo(f"📊 true TV = {report.true_tv:.6g}, true W1 = {report.true_w1:.6g}")
    for entry in report.entries:
        if not entry.applicable:
            click.echo(f"⚠️ {entry.name:<20} n/a ({entry.reason})")
        elif entry in violations:
            click.echo(f"❌ {entry.name:<20} {entry.value:.6g} violates {entry.dominates}")
        else:
            click.echo(f"✅ {entry.name:<20} {entry.value:.6g}")
    click.echo(f"✅ Report written: {path}")

    if violations:
        _finish(ctx, "bounds", config, units, start, EXIT_VIOLATION,
                f"{len(violations)} applicable bound(s) violated")
    _finish(ctx, "bounds", config, units, start, EXIT_OK)


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@out_option
@seed_option
@jobs_option
@click.pass_context
def converge(ctx, config_path, out_dir, seed, jobs):
    """Run a Monte Carlo convergence study (simple-mc or gibbs-mis)."""
    start, config, units = time.time(), None, 0
    instrumentor = get_global_instrumentor()
    try:
        with instrumentor.instrument_operation("convergence_study", "converge") as op, _mapped_errors():
            config = load_config(config_path, seed=seed)
            if config.scenario == "pair":
                raise ConfigError("converge needs a simple-mc or gibbs-mis config")
            guard = _guard(ctx)
            est = config.estimator
            n_nodes = len(config.grid.nodes) if config.grid.nodes is not None else int(config.grid.n)
            n_anchors = len(config.mis.anchors) if config.mis is not None else 1
            units = work_units(config.scenario, n_nodes, est.N, est.M, n_anchors)
            guard.check_grid(n_nodes)
            guard.check_work(units)
            if config.grid.metric.type == "truncated":
                guard.check_transport_nodes(n_nodes)
            op.set_study_info({"scenario": config.scenario, "N": est.N, "M": est.M,
                               "seed": est.seed, "n": n_nodes})

            study = run_convergence_study(config, jobs=jobs, out_dir=out_dir,
                                          max_states=guard.config.max_states)
            op.set_outcome_info({"slopes": study.slopes})
    except StudyFailed as e:
        _finish(ctx, "converge", config, units, start, e.code, str(e))
        return

    frame = study.table.frame
    click.echo(f"📊 {config.scenario}: M={config.estimator.M}, seed={config.estimator.seed}")
    for row in frame.itertuples(index=False):
        above = (row.mean_tv > row.bound_tv_expected + SE_SLACK * row.se_tv
                 or row.mean_w1 > row.bound_w1_expected + SE_SLACK * row.se_w1)
        glyph = "⚠️" if above else "✅"
        click.echo(f"{glyph} N={row.N:<6} TV {row.mean_tv:.4g} ± {row.se_tv:.2g} (bound {row.bound_tv_expected:.4g})"
                   f"  W1 {row.mean_w1:.4g} ± {row.se_w1:.2g} (bound {row.bound_w1_expected:.4g})")
    for column, slope in study.slopes.items():
        click.echo(f"📈 {column} slope {slope:.4f}")
    click.echo(f"✅ Table written: {study.csv_path}")
    click.echo(f"✅ Plot written: {study.svg_path}")
    _finish(ctx, "converge", config, units, start, EXIT_OK)


@cli.command()
@click.option("--suite", "suites", multiple=True, type=click.Choice(list(oracles.SUITES)),
              help="Run only the named suite (repeatable)")
@out_option
@seed_option
@click.pass_context
def oracle(ctx, suites, out_dir, seed):
    """Run the brute-force oracle suites and print a pass/fail table."""
    start = time.time()
    instrumentor = get_global_instrumentor()
    seed = oracles.DEFAULT_ORACLE_SEED if seed is None else seed
    try:
        with instrumentor.instrument_operation("oracle_suites", "oracle") as op, _mapped_errors():
            guard = _guard(ctx)
            results = oracles.run_oracles(seed=seed, suites=suites or None,
                                          max_transport_nodes=guard.config.max_transport_nodes)
            passed = sum(1 for r in results if r.passed)
            op.set_outcome_info({"passed": passed, "failed": len(results) - passed})
    except StudyFailed as e:
        _finish(ctx, "oracle", None, 0, start, e.code, str(e))
        return

    click.echo(oracles.format_results(results))
    if out_dir:
        frame = pd.DataFrame([vars(r) for r in results])
        path = write_csv(frame, Path(out_dir) / "oracle_results.csv")
        click.echo(f"✅ Results written: {path}")

    failed = [r.name for r in results if not r.passed]
    checks = sum(r.checks for r in results)
    if failed:
        _finish(ctx, "oracle", None, checks, start, EXIT_VIOLATION, f"failed suites: {', '.join(failed)}")
    click.echo(f"✅ All {len(results)} suites passed")
    _finish(ctx, "oracle", None, checks, start, EXIT_OK)


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
