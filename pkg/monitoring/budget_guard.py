#!/usr/bin/env python3
"""
monitoring/budget_guard.py
Compute budgets for the stability lab.

Limits live in monitoring/budget_config.yaml (path overridable through
LAB_BUDGET_CONFIG); a default file is written on first use. Every check
either passes, warns when usage crosses warning_threshold of the limit, or
raises BudgetExceededError.
"""

import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog
import yaml
from dotenv import load_dotenv

from stability_lab.errors import BudgetExceededError, ConfigError

try:
    from opentelemetry.trace import Status, StatusCode, get_current_span
    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False

load_dotenv()

logger = structlog.get_logger(__name__)

DEFAULT_CONFIG_PATH = "monitoring/budget_config.yaml"


@dataclass
class BudgetConfig:
    """Hard limits on enumeration, transport and sampling work"""
    max_states: int = 2 ** 20              # Gibbs state-space size
    max_transport_nodes: int = 512         # exact transport oracle grid size
    max_grid_nodes: int = 4096             # parameter grid size
    max_work_units: int = 2_000_000_000    # integrand evaluations per study
    warning_threshold: float = 0.8         # fraction of a limit that triggers a warning


@dataclass
class BudgetCheck:
    budget: str
    requested: float
    limit: float
    severity: str  # 'ok', 'warning', 'exceeded'

    @property
    def usage(self) -> float:
        return self.requested / self.limit if self.limit > 0 else float("inf")

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "usage": self.usage}


def work_units(scenario: str, n_nodes: int, N_values: List[int], M: int, n_anchors: int = 1) -> int:
    """Integrand evaluations of a convergence study"""
    per_replicate = sum(N_values) * n_nodes
    if scenario == "gibbs-mis":
        per_replicate *= n_anchors
    return per_replicate * M


class BudgetGuard:
    """Loads the budget file and checks requests against it"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path or os.getenv("LAB_BUDGET_CONFIG", DEFAULT_CONFIG_PATH))
        self.config = self._load_config()
        self.history: List[BudgetCheck] = []

    def _load_config(self) -> BudgetConfig:
        """Load configuration from YAML file or create default"""
        if not self.config_path.exists():
            default_config = BudgetConfig()
            self._save_config(default_config)
            logger.info("budget.config_created", path=str(self.config_path))
            return default_config
        try:
            with open(self.config_path, "r") as f:
                config_data = yaml.safe_load(f) or {}
            return BudgetConfig(**config_data)
        except (yaml.YAMLError, TypeError) as e:
            raise ConfigError(f"budget config {self.config_path} is invalid: {e}") from e

    def _save_config(self, config: BudgetConfig) -> None:
        try:
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_path, "w") as f:
                yaml.dump(asdict(config), f, default_flow_style=False, indent=2)
        except OSError as e:
            logger.warning("budget.config_save_failed", path=str(self.config_path), error=str(e))

    def check(self, budget: str, requested: float, limit: float) -> BudgetCheck:
        if requested > limit:
            severity = "exceeded"
        elif requested >= limit * self.config.warning_threshold:
            severity = "warning"
        else:
            severity = "ok"
        result = BudgetCheck(budget, requested, limit, severity)
        self.history.append(result)
        self._record_telemetry(result)

        if severity == "exceeded":
            logger.error("budget.exceeded", budget=budget, requested=requested, limit=limit)
            raise BudgetExceededError(budget, requested, limit)
        if severity == "warning":
            logger.warning("budget.near_limit", budget=budget, requested=requested, limit=limit)
        return result

    def check_states(self, n_states: int) -> BudgetCheck:
        return self.check("states", n_states, self.config.max_states)

    def check_transport_nodes(self, n: int) -> BudgetCheck:
        return self.check("transport_nodes", n, self.config.max_transport_nodes)

    def check_grid(self, n: int) -> BudgetCheck:
        return self.check("grid_nodes", n, self.config.max_grid_nodes)

    def check_work(self, units: int) -> BudgetCheck:
        return self.check("work_units", units, self.config.max_work_units)

    def _record_telemetry(self, result: BudgetCheck) -> None:
        if not OTEL_AVAILABLE:
            return
        span = get_current_span()
        if not (span and span.is_recording()):
            return
        span.set_attributes({
            f"budget.{result.budget}.requested": float(result.requested),
            f"budget.{result.budget}.limit": float(result.limit),
            f"budget.{result.budget}.severity": result.severity,
        })
        if result.severity == "exceeded":
            span.add_event("budget_exceeded", result.to_dict())
            span.set_status(Status(StatusCode.ERROR, f"{result.budget} budget exceeded"))

    def status(self) -> Dict[str, Any]:
        """Limits plus the checks performed so far"""
        return {
            "config_path": str(self.config_path),
            "limits": asdict(self.config),
            "checks": [c.to_dict() for c in self.history],
            "warnings": sum(1 for c in self.history if c.severity == "warning"),
        }
