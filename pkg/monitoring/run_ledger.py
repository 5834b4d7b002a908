"""
monitoring/run_ledger.py
Append-only ledger of lab runs (logs/runs.csv) with span annotations.

The ledger sits outside the study output directory, so timestamps and
latencies never leak into the deterministic artifacts.
"""

import csv
import os
import pathlib
import time
from typing import Any, Dict

import pandas as pd
import structlog

try:
    from opentelemetry.trace import Status, StatusCode, get_current_span
    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False

logger = structlog.get_logger(__name__)

RUNS_CSV = pathlib.Path(os.getenv("LAB_RUN_LEDGER", "logs/runs.csv"))

LEDGER_COLUMNS = [
    "timestamp",
    "study",
    "config_digest",
    "scenario",
    "work_units",
    "elapsed_ms",
    "outcome",
]


def initialize_ledger(path: pathlib.Path = None) -> pathlib.Path:
    """Create the ledger CSV with its header row if missing"""
    path = pathlib.Path(path or RUNS_CSV)
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            csv.writer(f).writerow(LEDGER_COLUMNS)
        logger.debug("ledger.initialized", path=str(path))
    return path


def _annotate_span(attributes: Dict[str, Any], failed: bool) -> None:
    if not OTEL_AVAILABLE:
        return
    span = get_current_span()
    if span and span.is_recording():
        span.set_attributes(attributes)
        span.add_event("run_logged", attributes)
        if failed:
            span.set_status(Status(StatusCode.ERROR, f"run outcome: {attributes['run.outcome']}"))


def log_run(study: str, config_digest: str, scenario: str, work_units: int,
            elapsed_ms: int, outcome: str, path: pathlib.Path = None) -> Dict[str, Any]:
    """Record one finished (or failed) run"""
    path = initialize_ledger(path)
    row = {
        "timestamp": int(time.time()),
        "study": study,
        "config_digest": config_digest,
        "scenario": scenario,
        "work_units": int(work_units),
        "elapsed_ms": int(elapsed_ms),
        "outcome": outcome,
    }
    with path.open("a", newline="") as f:
        csv.writer(f).writerow([row[c] for c in LEDGER_COLUMNS])

    _annotate_span({
        "run.study": study,
        "run.scenario": scenario,
        "run.config_digest": config_digest,
        "run.work_units": int(work_units),
        "run.elapsed_ms": int(elapsed_ms),
        "run.outcome": outcome,
    }, failed=outcome not in ("ok", "pass"))
    logger.info("run.logged", **row)
    return row


def run_summary(path: pathlib.Path = None) -> pd.DataFrame:
    """Per (study, scenario) counts, work and latency aggregates"""
    path = pathlib.Path(path or RUNS_CSV)
    columns = ["study", "scenario", "runs", "failures", "total_work_units", "mean_elapsed_ms"]
    if not path.exists():
        return pd.DataFrame(columns=columns)
    df = pd.read_csv(path)
    if df.empty:
        return pd.DataFrame(columns=columns)
    df["failed"] = ~df["outcome"].isin(["ok", "pass"])
    summary = df.groupby(["study", "scenario"], as_index=False).agg(
        runs=("outcome", "size"),
        failures=("failed", "sum"),
        total_work_units=("work_units", "sum"),
        mean_elapsed_ms=("elapsed_ms", "mean"),
    )
    return summary[columns]


def format_summary(summary: pd.DataFrame) -> str:
    if summary.empty:
        return "No runs recorded"
    lines = ["📊 Lab run summary", "=" * 40]
    for row in summary.itertuples(index=False):
        lines.append(
            f"{row.study:<10} {row.scenario:<10} runs={row.runs} failures={row.failures} "
            f"work={row.total_work_units:,} mean={row.mean_elapsed_ms:.0f}ms")
    return "\n".join(lines)
