#!/usr/bin/env python3
"""
monitoring/otel_helpers.py
Tracing for bound reports, convergence studies and oracle runs.

Nothing is exported unless OTLP_ENDPOINT and OTLP_API_KEY are both set; in
that case every helper below degrades to a no-op and the lab runs unchanged.
"""

import base64
import os
import time
from contextlib import ExitStack, nullcontext
from dataclasses import dataclass
from typing import Any, Dict, Optional

import structlog
from dotenv import load_dotenv

try:
    from opentelemetry import trace
    from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import BatchSpanProcessor
    from opentelemetry.trace import Status, StatusCode
    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False
    trace = None

load_dotenv()

logger = structlog.get_logger(__name__)

SERVICE_NAME = "stability-lab"

# elapsed-time bands for study spans (ms)
INTERACTIVE_MS = 1_000
DESK_MS = 300_000

_ENV_FIELDS = {
    "service_name": ("OTEL_SERVICE_NAME", SERVICE_NAME),
    "service_version": ("OTEL_SERVICE_VERSION", "v1.0"),
    "environment": ("ENVIRONMENT", "development"),
    "namespace": ("OTEL_NAMESPACE", SERVICE_NAME),
    "endpoint": ("OTLP_ENDPOINT", None),
    "username": ("OTLP_USERNAME", None),
    "api_key": ("OTLP_API_KEY", None),
}


@dataclass(frozen=True)
class OTELConfig:
    service_name: str = SERVICE_NAME
    service_version: str = "v1.0"
    environment: str = "development"
    namespace: str = SERVICE_NAME
    endpoint: Optional[str] = None
    username: Optional[str] = None
    api_key: Optional[str] = None

    @classmethod
    def from_env(cls) -> "OTELConfig":
        return cls(**{name: os.getenv(var, default) for name, (var, default) in _ENV_FIELDS.items()})

    @property
    def exporting(self) -> bool:
        return bool(self.endpoint and self.api_key)

    @property
    def traces_url(self) -> str:
        return f"{self.endpoint.rstrip('/')}/v1/traces"

    def resource_attributes(self) -> Dict[str, str]:
        return {
            "service.name": self.service_name,
            "service.version": self.service_version,
            "service.namespace": self.namespace,
            "deployment.environment": self.environment,
        }

    def export_headers(self) -> Dict[str, str]:
        """Basic auth plus the tenant header Grafana-style gateways expect"""
        token = base64.b64encode(f"{self.username or ''}:{self.api_key}".encode()).decode()
        return {"Authorization": f"Basic {token}", "X-Scope-OrgID": self.username or ""}


class OTELManager:
    """Owns the tracer provider and its batch processor"""

    def __init__(self, config: Optional[OTELConfig] = None):
        self.config = config or OTELConfig.from_env()
        self.tracer = None
        self.span_processor = None

    @property
    def active(self) -> bool:
        return self.tracer is not None

    def initialize(self) -> bool:
        if not OTEL_AVAILABLE:
            logger.debug("otel.unavailable")
            return False
        if not self.config.exporting:
            logger.debug("otel.disabled", reason="endpoint or api key missing")
            return False

        try:
            provider = TracerProvider(resource=Resource(attributes=self.config.resource_attributes()))
            processor = BatchSpanProcessor(
                OTLPSpanExporter(endpoint=self.config.traces_url, headers=self.config.export_headers()))
            provider.add_span_processor(processor)
            trace.set_tracer_provider(provider)
        except Exception as e:
            logger.warning("otel.init_failed", error=str(e))
            return False

        self.span_processor = processor
        self.tracer = trace.get_tracer(self.config.service_name)
        logger.info("otel.exporting", url=self.config.traces_url)
        return True

    def get_tracer(self):
        return self.tracer

    def shutdown(self, timeout_ms: int = 5000) -> None:
        if self.span_processor is None:
            return
        try:
            self.span_processor.force_flush(timeout_millis=timeout_ms)
        except Exception as e:
            logger.warning("otel.flush_failed", error=str(e))


def elapsed_band(elapsed_ms: int) -> str:
    if elapsed_ms < INTERACTIVE_MS:
        return "interactive"
    if elapsed_ms < DESK_MS:
        return "desk"
    return "batch"


class SpanManager:
    """Opens spans and translates lab objects into span attributes"""

    def __init__(self, tracer, study: Optional[str] = None):
        self.tracer = tracer
        self.study = study

    def create_span(self, operation_name: str, operation_type: Optional[str] = None):
        if self.tracer is None:
            return nullcontext()
        attributes = {"lab.operation": operation_name}
        if operation_type:
            attributes["lab.command"] = operation_type
        if self.study:
            attributes["lab.study"] = self.study
        return self.tracer.start_as_current_span(operation_name, attributes=attributes)

    def set_study_attributes(self, span, study_info: Dict[str, Any]) -> None:
        """scenario, N schedule, M, seed and grid size"""
        if span is None or not study_info:
            return
        attributes = {
            "study.scenario": str(study_info.get("scenario", "unknown")),
            "study.replicates": int(study_info.get("M", 0)),
            "study.seed": str(study_info.get("seed", "")),
            "study.grid_nodes": int(study_info.get("n", 0)),
        }
        schedule = list(study_info.get("N") or ())
        if schedule:
            attributes.update({
                "study.N.min": int(schedule[0]),
                "study.N.max": int(schedule[-1]),
                "study.N.count": len(schedule),
            })
        span.set_attributes(attributes)

    def set_timing_attributes(self, span, elapsed_ms: int) -> None:
        if span is None:
            return
        span.set_attributes({"timing.elapsed_ms": int(elapsed_ms), "timing.band": elapsed_band(elapsed_ms)})

    def set_outcome_attributes(self, span, outcome: Dict[str, Any]) -> None:
        """Bound violations, applicability counts, fitted rates, oracle tallies"""
        if span is None or not outcome:
            return
        attributes = {}
        entries = outcome.get("entries")
        if entries is not None:
            applicable = sum(1 for e in entries if e.applicable)
            attributes["bounds.total"] = len(entries)
            attributes["bounds.applicable"] = applicable
            attributes["bounds.not_applicable"] = len(entries) - applicable
        if "violations" in outcome:
            attributes["bounds.violations"] = len(outcome["violations"])
        attributes.update({f"rate.{column}.slope": float(slope)
                           for column, slope in (outcome.get("slopes") or {}).items()})
        if "passed" in outcome:
            attributes["oracle.passed"] = int(outcome["passed"])
            attributes["oracle.failed"] = int(outcome.get("failed", 0))
        span.set_attributes(attributes)

    def set_error_attributes(self, span, error: BaseException, stage: str = "") -> None:
        if span is None:
            return
        span.set_attributes({
            "error.type": type(error).__name__,
            "error.message": str(error),
            "error.stage": stage,
        })
        span.record_exception(error)
        if OTEL_AVAILABLE:
            span.set_status(Status(StatusCode.ERROR, str(error)))


class OperationInstrumentor:
    """One traced CLI operation; attribute setters are no-ops without a span"""

    def __init__(self, span_manager: Optional[SpanManager], operation_name: str,
                 operation_type: Optional[str] = None):
        self.span_manager = span_manager
        self.operation_name = operation_name
        self.operation_type = operation_type
        self.span = None
        self._stack = ExitStack()
        self._started = 0.0

    def __enter__(self) -> "OperationInstrumentor":
        if self.span_manager is not None:
            self._started = time.perf_counter()
            self.span = self._stack.enter_context(
                self.span_manager.create_span(self.operation_name, self.operation_type))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.span is not None:
            self.span_manager.set_timing_attributes(self.span, int((time.perf_counter() - self._started) * 1000))
            if exc_val is not None:
                self.span_manager.set_error_attributes(self.span, exc_val, self.operation_name)
        return self._stack.__exit__(exc_type, exc_val, exc_tb)

    def set_study_info(self, study_info: Dict[str, Any]) -> None:
        if self.span is not None:
            self.span_manager.set_study_attributes(self.span, study_info)

    def set_outcome_info(self, outcome: Dict[str, Any]) -> None:
        if self.span is not None:
            self.span_manager.set_outcome_attributes(self.span, outcome)

    def set_custom_attributes(self, attributes: Dict[str, Any]) -> None:
        if self.span is not None:
            self.span.set_attributes(attributes)


class LabInstrumentor:
    """Entry point used by the CLI commands"""

    def __init__(self, study: Optional[str] = None):
        self.otel_manager = OTELManager()
        self.initialized = self.otel_manager.initialize()
        self.span_manager = SpanManager(self.otel_manager.get_tracer(), study) if self.initialized else None

    def instrument_operation(self, operation_name: str, operation_type: Optional[str] = None) -> OperationInstrumentor:
        return OperationInstrumentor(self.span_manager, operation_name, operation_type)

    def shutdown(self) -> None:
        self.otel_manager.shutdown()


_instrumentor: Optional[LabInstrumentor] = None


def get_global_instrumentor() -> LabInstrumentor:
    global _instrumentor
    if _instrumentor is None:
        _instrumentor = LabInstrumentor()
    return _instrumentor


def shutdown_otel() -> None:
    """Flush and forget the process-wide instrumentor (registered by the CLI on exit)"""
    global _instrumentor
    if _instrumentor is not None:
        _instrumentor.shutdown()
        _instrumentor = None
