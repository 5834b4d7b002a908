#!/usr/bin/env python3
"""
tests/test_budget_guard.py
Budget file handling, threshold checks and span annotations
"""

from unittest.mock import MagicMock, patch

import pytest
import yaml

from monitoring.budget_guard import OTEL_AVAILABLE, BudgetCheck, BudgetConfig, BudgetGuard, work_units
from stability_lab.errors import BudgetExceededError, ConfigError


@pytest.fixture
def budget_file(tmp_path):
    def make(text):
        path = tmp_path / "budget.yaml"
        path.write_text(text)
        return path
    return make


class TestBudgetConfigFile:

    def test_default_file_is_created(self, tmp_path):
        path = tmp_path / "nested" / "budget.yaml"
        guard = BudgetGuard(str(path))
        assert path.exists()
        assert guard.config == BudgetConfig()
        assert yaml.safe_load(path.read_text())["max_states"] == 2 ** 20

    def test_environment_path(self, tmp_path, monkeypatch):
        path = tmp_path / "from_env.yaml"
        monkeypatch.setenv("LAB_BUDGET_CONFIG", str(path))
        assert BudgetGuard().config_path == path
        assert path.exists()

    def test_partial_file_keeps_defaults(self, budget_file):
        guard = BudgetGuard(str(budget_file("max_grid_nodes: 10\n")))
        assert guard.config.max_grid_nodes == 10
        assert guard.config.max_states == BudgetConfig().max_states

    def test_empty_file(self, budget_file):
        assert BudgetGuard(str(budget_file(""))).config == BudgetConfig()

    def test_unknown_key(self, budget_file):
        with pytest.raises(ConfigError):
            BudgetGuard(str(budget_file("max_gpus: 3\n")))

    def test_broken_yaml(self, budget_file):
        with pytest.raises(ConfigError):
            BudgetGuard(str(budget_file("max_states: [1, 2\n")))


class TestChecks:

    @pytest.fixture
    def guard(self, budget_file):
        return BudgetGuard(str(budget_file("max_grid_nodes: 100\nmax_states: 64\nwarning_threshold: 0.5\n")))

    def test_ok(self, guard):
        check = guard.check_grid(10)
        assert check.severity == "ok"
        assert check.usage == pytest.approx(0.1)

    def test_warning(self, guard):
        assert guard.check_grid(50).severity == "warning"
        assert guard.check_grid(100).severity == "warning"

    def test_exceeded(self, guard):
        with pytest.raises(BudgetExceededError) as exc:
            guard.check_states(65)
        assert (exc.value.budget, exc.value.requested, exc.value.limit) == ("states", 65, 64)
        assert guard.history[-1].severity == "exceeded"

    def test_zero_limit_usage(self):
        assert BudgetCheck("states", 1, 0, "exceeded").usage == float("inf")

    def test_status(self, guard):
        guard.check_grid(10)
        guard.check_grid(60)
        status = guard.status()
        assert status["limits"]["max_grid_nodes"] == 100
        assert [c["severity"] for c in status["checks"]] == ["ok", "warning"]
        assert status["warnings"] == 1


class TestWorkUnits:

    def test_simple_mc(self):
        assert work_units("simple-mc", 9, [4, 16], 20) == 20 * 9 * 20

    def test_mis_counts_anchors(self):
        assert work_units("gibbs-mis", 9, [4, 16], 20, n_anchors=3) == 3 * 20 * 9 * 20

    def test_anchors_ignored_for_simple_mc(self):
        assert work_units("simple-mc", 5, [10], 2, n_anchors=4) == 100


@pytest.mark.skipif(not OTEL_AVAILABLE, reason="opentelemetry not installed")
class TestTelemetry:

    def test_attributes_on_recording_span(self, tmp_path):
        guard = BudgetGuard(str(tmp_path / "b.yaml"))
        span = MagicMock()
        span.is_recording.return_value = True
        with patch("monitoring.budget_guard.get_current_span", return_value=span):
            guard.check_grid(3)
        attrs = span.set_attributes.call_args[0][0]
        assert attrs["budget.grid_nodes.requested"] == 3.0
        assert attrs["budget.grid_nodes.severity"] == "ok"
        span.set_status.assert_not_called()

    def test_error_status_when_exceeded(self, tmp_path):
        guard = BudgetGuard(str(tmp_path / "b.yaml"))
        span = MagicMock()
        span.is_recording.return_value = True
        with patch("monitoring.budget_guard.get_current_span", return_value=span):
            with pytest.raises(BudgetExceededError):
                guard.check_transport_nodes(10_000)
        span.add_event.assert_called_once()
        span.set_status.assert_called_once()

    def test_non_recording_span_untouched(self, tmp_path):
        guard = BudgetGuard(str(tmp_path / "b.yaml"))
        span = MagicMock()
        span.is_recording.return_value = False
        with patch("monitoring.budget_guard.get_current_span", return_value=span):
            guard.check_grid(3)
        span.set_attributes.assert_not_called()
