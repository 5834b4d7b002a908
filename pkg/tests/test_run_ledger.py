#!/usr/bin/env python3
"""
tests/test_run_ledger.py
Run ledger rows, summaries and span annotations
"""

from unittest.mock import MagicMock, patch

import pandas as pd
import pytest

from monitoring.run_ledger import (
    LEDGER_COLUMNS,
    OTEL_AVAILABLE,
    format_summary,
    initialize_ledger,
    log_run,
    run_summary,
)


@pytest.fixture
def path(tmp_path):
    return tmp_path / "ledger" / "runs.csv"


class TestLedger:

    def test_initialize_writes_header_once(self, path):
        initialize_ledger(path)
        initialize_ledger(path)
        assert path.read_text().splitlines() == [",".join(LEDGER_COLUMNS)]

    def test_log_run_appends(self, path):
        row = log_run("converge", "abc123", "simple-mc", 6120, 42, "ok", path=path)
        log_run("bounds", "def456", "pair", 2, 3, "violation", path=path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == LEDGER_COLUMNS
        assert frame["study"].tolist() == ["converge", "bounds"]
        assert frame["work_units"].tolist() == [6120, 2]
        assert row["timestamp"] > 0

    def test_default_path_follows_module_setting(self, tmp_path):
        log_run("oracle", "", "oracle", 10, 1, "ok")
        assert (tmp_path / "logs" / "runs.csv").exists()


class TestSummary:

    def test_missing_file(self, path):
        summary = run_summary(path)
        assert summary.empty
        assert format_summary(summary) == "No runs recorded"

    def test_header_only(self, path):
        initialize_ledger(path)
        assert run_summary(path).empty

    def test_aggregates(self, path):
        log_run("converge", "a", "simple-mc", 100, 10, "ok", path=path)
        log_run("converge", "a", "simple-mc", 300, 30, "budget-exceeded", path=path)
        log_run("bounds", "b", "pair", 2, 5, "ok", path=path)
        summary = run_summary(path).set_index(["study", "scenario"])
        converge = summary.loc[("converge", "simple-mc")]
        assert converge["runs"] == 2
        assert converge["failures"] == 1
        assert converge["total_work_units"] == 400
        assert converge["mean_elapsed_ms"] == pytest.approx(20.0)
        assert summary.loc[("bounds", "pair")]["failures"] == 0

    def test_format(self, path):
        log_run("converge", "a", "gibbs-mis", 12345, 10, "ok", path=path)
        text = format_summary(run_summary(path))
        assert "runs=1 failures=0" in text
        assert "work=12,345" in text


@pytest.mark.skipif(not OTEL_AVAILABLE, reason="opentelemetry not installed")
class TestSpanAnnotations:

    def _span(self):
        span = MagicMock()
        span.is_recording.return_value = True
        return span

    def test_ok_run(self, path):
        span = self._span()
        with patch("monitoring.run_ledger.get_current_span", return_value=span):
            log_run("converge", "a", "simple-mc", 100, 10, "ok", path=path)
        attrs = span.set_attributes.call_args[0][0]
        assert attrs["run.outcome"] == "ok"
        assert attrs["run.work_units"] == 100
        span.set_status.assert_not_called()

    def test_failed_run_sets_error(self, path):
        span = self._span()
        with patch("monitoring.run_ledger.get_current_span", return_value=span):
            log_run("oracle", "", "oracle", 5, 1, "violation", path=path)
        span.set_status.assert_called_once()
