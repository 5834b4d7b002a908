"""
stability_lab/config.py
JSON experiment configuration, validated with pydantic.

See docs/CONFIG_SCHEMA.md for the field reference and configs/ for samples.
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from stability_lab.errors import ConfigError
from stability_lab.posterior_core import (
    UNIFORM_TRAPEZOID,
    Metric,
    ThetaGrid,
    build_grid,
)
from stability_lab.serialization import load_json

DEFAULT_REPLICATES = 200
MAX_SEED = 2 ** 64 - 1


def _parse_infinite(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MetricConfig(_Strict):
    type: Literal["euclidean", "truncated"] = "euclidean"
    R: Optional[float] = None

    def build(self) -> Metric:
        return Metric.from_dict(self.model_dump(exclude_none=True))


class GridConfig(_Strict):
    """Either explicit nodes or (lo, hi, n); weights are a rule name or a list"""
    nodes: Optional[List[float]] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    n: Optional[int] = None
    weights: Union[Literal["uniform-trapezoid", "counting"], List[float]] = UNIFORM_TRAPEZOID
    metric: MetricConfig = Field(default_factory=MetricConfig)

    @model_validator(mode="after")
    def _one_layout(self) -> "GridConfig":
        explicit = self.nodes is not None
        ranged = None not in (self.lo, self.hi, self.n)
        if explicit == ranged:
            raise ValueError("grid needs either 'nodes' or all of 'lo', 'hi', 'n'")
        if explicit and self.weights == UNIFORM_TRAPEZOID:
            raise ValueError("explicit nodes need 'counting' or a weight list")
        return self

    def build(self) -> ThetaGrid:
        metric = self.metric.build()
        if self.nodes is not None:
            nodes = np.asarray(self.nodes, dtype=float)
            weights = np.ones_like(nodes) if self.weights == "counting" else self.weights
            return ThetaGrid(nodes, weights, metric)
        rule = np.ones(self.n) if self.weights == "counting" else self.weights
        return build_grid(self.lo, self.hi, self.n, metric, rule)


class PhiFormula(_Strict):
    """zero, linear (slope * theta) or quadratic ((theta - center)^2 / (2 scale^2))"""
    kind: Literal["zero", "linear", "quadratic"] = "zero"
    slope: float = 0.0
    center: float = 0.0
    scale: float = 1.0

    def evaluate(self, nodes: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.slope * nodes
        if self.kind == "quadratic":
            return (nodes - self.center) ** 2 / (2.0 * self.scale ** 2)
        return np.zeros_like(nodes)


class HolderConfig(_Strict):
    p: float
    K: float
    ell: Optional[float] = None

    @field_validator("p", mode="before")
    @classmethod
    def _infinite_p(cls, value: Any) -> Any:
        return _parse_infinite(value)

    @field_validator("p")
    @classmethod
    def _p_range(cls, value: float) -> float:
        if not value >= 1:
            raise ValueError("p must lie in [1, inf]")
        return value


class SamplerConfig(_Strict):
    kind: Literal["constant", "uniform-exp", "ising-uniform"]
    c: float = 1.0


class EstimatorConfig(_Strict):
    N: List[int]
    M: int = DEFAULT_REPLICATES
    seed: int
    check_envelope: bool = True
    export_ensembles: bool = False

    @field_validator("N")
    @classmethod
    def _increasing(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("N list must be nonempty")
        if any(n < 1 for n in value):
            raise ValueError("every N must be >= 1")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("N list must be strictly increasing")
        return value

    @field_validator("M")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("M must be >= 1")
        return value

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value: int) -> int:
        if not 0 <= value <= MAX_SEED:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return value


class ModelConfig(_Strict):
    kind: Literal["ising", "table"]
    rows: Optional[int] = None
    cols: Optional[int] = None
    wrap: bool = False
    energies: Optional[List[float]] = None

    @model_validator(mode="after")
    def _fields_for_kind(self) -> "ModelConfig":
        if self.kind == "ising" and (self.rows is None or self.cols is None):
            raise ValueError("ising model needs rows and cols")
        if self.kind == "table" and not self.energies:
            raise ValueError("table model needs energies")
        return self


class PriorConfig(_Strict):
    kind: Literal["uniform", "exponential"] = "uniform"
    rate: float = 1.0


class MISConfig(_Strict):
    anchors: List[float]
    weights: List[float]

    @model_validator(mode="after")
    def _aligned(self) -> "MISConfig":
        if not self.anchors or len(self.anchors) != len(self.weights):
            raise ValueError("anchors and weights must be nonempty and of equal length")
        return self


class ExperimentConfig(_Strict):
    scenario: Literal["pair", "simple-mc", "gibbs-mis"]
    name: str = "experiment"
    grid: GridConfig
    phi: Union[List[float], PhiFormula, None] = None
    z: Optional[List[float]] = None
    z_tilde: Optional[List[float]] = None
    holder: Optional[HolderConfig] = None
    bounds: Optional[List[str]] = None
    estimator: Optional[EstimatorConfig] = None
    sampler: Optional[SamplerConfig] = None
    model: Optional[ModelConfig] = None
    x_obs: Union[int, str, None] = None
    prior: PriorConfig = Field(default_factory=PriorConfig)
    mis: Optional[MISConfig] = None
    output_dir: str = "out"

    @model_validator(mode="after")
    def _scenario_fields(self) -> "ExperimentConfig":
        missing = []
        if self.scenario == "pair":
            missing = [f for f in ("z", "z_tilde") if getattr(self, f) is None]
        else:
            if self.estimator is None:
                missing.append("estimator")
            if self.scenario == "simple-mc" and self.sampler is None:
                missing.append("sampler")
            if self.scenario == "gibbs-mis":
                missing += [f for f in ("model", "x_obs", "mis") if getattr(self, f) is None]
            if self.sampler is not None and self.sampler.kind == "ising-uniform" and self.model is None:
                missing.append("model")
        if missing:
            raise ValueError(f"scenario {self.scenario!r} requires: {', '.join(missing)}")
        return self

    def phi_values(self, nodes: np.ndarray) -> np.ndarray:
        if self.phi is None:
            return np.zeros_like(nodes)
        if isinstance(self.phi, PhiFormula):
            return self.phi.evaluate(nodes)
        values = np.asarray(self.phi, dtype=float)
        if values.shape != nodes.shape:
            raise ConfigError(f"phi has {values.size} values, grid has {nodes.size} nodes")
        return values

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None or self.estimator is None:
            return self
        return self.model_copy(update={"estimator": self.estimator.model_copy(update={"seed": seed})})

    def digest(self) -> str:
        """Stable short hash of the resolved configuration"""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def _format_errors(error: PydanticValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as e:
        raise ConfigError(f"invalid experiment config: {_format_errors(e)}") from e


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """Read and validate a JSON config; seed overrides estimator.seed when given"""
    path = Path(path)
    try:
        data = load_json(path)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON ({path}): {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    config = parse_config(data)
    if seed is not None:
        if not 0 <= seed <= MAX_SEED:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        config = config.with_seed(seed)
    return config
