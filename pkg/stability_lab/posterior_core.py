"""
stability_lab/posterior_core.py
Parameter grids, the functions Phi / Z, and exact grid posteriors.

pi_Z(dtheta) = exp(-Phi(theta)) / (Z(theta) C_Z) mu(dtheta) with mu represented
by quadrature weights on a strictly increasing 1-D grid. All integrals are
grid sums, which keeps every distance in this lab exactly computable.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import structlog
from scipy.special import logsumexp

from stability_lab.errors import DegeneratePosteriorError, GridMismatchError, ValidationError
from stability_lab.serialization import PathLike, dump_json, load_json

logger = structlog.get_logger(__name__)

UNIFORM_TRAPEZOID = "uniform-trapezoid"


@dataclass(frozen=True)
class Metric:
    """d(theta, theta') = |theta - theta'| or min{R, |theta - theta'|}"""
    kind: str = "euclidean"
    R: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "truncated"):
            raise ValidationError(f"unknown metric type: {self.kind!r}")
        if self.kind == "truncated":
            if self.R is None or not (self.R > 0) or not math.isfinite(self.R):
                raise ValidationError("truncated metric requires a finite R > 0")

    @property
    def is_euclidean(self) -> bool:
        return self.kind == "euclidean"

    def __call__(self, a, b) -> np.ndarray:
        dist = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
        if self.kind == "truncated":
            dist = np.minimum(self.R, dist)
        return dist

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "truncated":
            return {"type": "truncated", "R": self.R}
        return {"type": "euclidean"}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "Metric":
        if not data:
            return cls()
        return cls(kind=data.get("type", "euclidean"), R=data.get("R"))


EUCLIDEAN = Metric()


def truncated(R: float) -> Metric:
    return Metric(kind="truncated", R=float(R))


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ThetaGrid:
    """Discretized parameter space: nodes, quadrature weights (mu) and metric"""
    nodes: np.ndarray
    quad_weights: np.ndarray
    metric: Metric = field(default=EUCLIDEAN)

    def __post_init__(self):
        nodes = _frozen_array(self.nodes)
        weights = _frozen_array(self.quad_weights)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "quad_weights", weights)

        if nodes.size < 2:
            raise ValidationError(f"grid needs at least 2 nodes, got {nodes.size}")
        if not np.all(np.isfinite(nodes)):
            raise ValidationError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ValidationError("grid nodes must be strictly increasing")
        if weights.size != nodes.size:
            raise ValidationError(
                f"quad_weights length {weights.size} != nodes length {nodes.size}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValidationError("quad_weights must be finite and nonnegative")
        if not np.any(weights > 0):
            raise ValidationError("at least one quadrature weight must be positive")

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def diameter(self) -> float:
        span = float(self.nodes[-1] - self.nodes[0])
        if self.metric.kind == "truncated":
            return min(span, self.metric.R)
        return span

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of nodes carrying positive mu-mass"""
        return self.quad_weights > 0

    def distance_matrix(self) -> np.ndarray:
        return self.metric(self.nodes[:, None], self.nodes[None, :])

    def matches(self, other: "ThetaGrid") -> bool:
        if self is other:
            return True
        return (self.n == other.n
                and self.metric == other.metric
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.quad_weights, other.quad_weights))

    def require_same(self, other: "ThetaGrid") -> None:
        if not self.matches(other):
            raise GridMismatchError("objects are defined on different grids")

    def with_weights(self, weights) -> "ThetaGrid":
        return ThetaGrid(self.nodes, weights, self.metric)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": self.nodes.tolist(),
            "weights": self.quad_weights.tolist(),
            "metric": self.metric.to_dict(),
        }


def build_grid(lo: float, hi: float, n: int, metric: Metric = EUCLIDEAN,
               weight_rule: Union[str, Sequence[float]] = UNIFORM_TRAPEZOID) -> ThetaGrid:
    """
    Equispaced grid on [lo, hi].

    weight_rule "uniform-trapezoid" gives (h/2, h, ..., h, h/2), i.e. Lebesgue
    measure on [lo, hi]; a sequence of n nonnegative weights is passed through
    (counting measure, folded-in priors, ...).
    """
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValidationError(f"grid bounds must satisfy lo < hi, got ({lo}, {hi})")
    if int(n) != n or n < 2:
        raise ValidationError(f"grid needs n >= 2 nodes, got {n}")
    n = int(n)

    h = (hi - lo) / (n - 1)
    nodes = lo + h * np.arange(n, dtype=float)
    nodes[-1] = hi

    if isinstance(weight_rule, str):
        if weight_rule != UNIFORM_TRAPEZOID:
            raise ValidationError(f"unknown weight rule: {weight_rule!r}")
        weights = np.full(n, h)
        weights[0] = weights[-1] = h / 2.0
    else:
        weights = np.asarray(weight_rule, dtype=float)
        if weights.shape != (n,):
            raise ValidationError(f"custom weights must have length {n}")
        if np.any(weights < 0):
            raise ValidationError("custom weights must be nonnegative")

    return ThetaGrid(nodes, weights, metric)


def counting_grid(nodes: Sequence[float], metric: Metric = EUCLIDEAN) -> ThetaGrid:
    """Grid carrying counting measure (unit weight per node)"""
    nodes = np.asarray(nodes, dtype=float)
    return ThetaGrid(nodes, np.ones_like(nodes), metric)


@dataclass(frozen=True, eq=False)
class PosteriorSpec:
    """Phi and Z evaluated on the grid nodes"""
    grid: ThetaGrid
    phi: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        phi = _frozen_array(self.phi)
        z = _frozen_array(self.z)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "z", z)

        n = self.grid.n
        if phi.size != n or z.size != n:
            raise ValidationError(
                f"phi ({phi.size}) and z ({z.size}) must match the grid size {n}")
        if not np.all(np.isfinite(phi)):
            raise ValidationError("phi must be finite at every node")
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise ValidationError("z must be positive and finite at every node")

    def with_z(self, z) -> "PosteriorSpec":
        """Same Phi and grid, another normalizing function (e.g. Z-tilde)"""
        return PosteriorSpec(self.grid, self.phi, z)

    def rescaled(self, c: float) -> "PosteriorSpec":
        return self.with_z(c * self.z)

    def to_dict(self) -> Dict[str, Any]:
        return {**self.grid.to_dict(), "phi": self.phi.tolist(), "z": self.z.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PosteriorSpec":
        try:
            grid = ThetaGrid(data["nodes"], data["weights"], Metric.from_dict(data.get("metric")))
            return cls(grid, data["phi"], data["z"])
        except KeyError as e:
            raise ValidationError(f"posterior spec missing field {e}") from e

    def to_json(self, path: PathLike) -> Path:
        return dump_json(self.to_dict(), path)

    @classmethod
    def from_json(cls, path: PathLike) -> "PosteriorSpec":
        data = load_json(path)
        if not isinstance(data, dict):
            raise ValidationError("posterior spec JSON must be an object")
        return cls.from_dict(data)


@dataclass(frozen=True, eq=False)
class Posterior:
    """Exact grid posterior: density w.r.t. mu, C_Z and atom masses p_i * w_i"""
    grid: ThetaGrid
    density: np.ndarray
    c_z: float
    atom_masses: np.ndarray
    log_c_z: float = 0.0

    @property
    def n(self) -> int:
        return self.grid.n

    def mean(self, f) -> float:
        return float(np.dot(self.atom_masses, np.asarray(f, dtype=float)))

    @classmethod
    def from_masses(cls, grid: ThetaGrid, masses) -> "Posterior":
        """
        Posterior given directly by atom masses (density = mass / weight on the
        mu-support). Used for synthetic test measures; c_z is set to 1.
        """
        masses = np.asarray(masses, dtype=float)
        if masses.shape != (grid.n,) or np.any(masses < 0):
            raise ValidationError("atom masses must be nonnegative and aligned with the grid")
        if np.any(masses[~grid.support] > 0):
            raise ValidationError("mass placed on a node with zero quadrature weight")
        total = masses.sum()
        if not abs(total - 1.0) <= 1e-12 * max(1.0, total):
            raise ValidationError(f"atom masses sum to {total!r}, expected 1")
        density = np.zeros_like(masses)
        np.divide(masses, grid.quad_weights, out=density, where=grid.support)
        return cls(grid, _frozen_array(density), 1.0, _frozen_array(masses))


def _log_terms(spec: PosteriorSpec) -> np.ndarray:
    return -spec.phi - np.log(spec.z)


def log_normalizing_constant(spec: PosteriorSpec) -> float:
    """log C_Z via log-sum-exp over the nodes with positive quadrature weight"""
    support = spec.grid.support
    return float(logsumexp(_log_terms(spec)[support], b=spec.grid.quad_weights[support]))


def normalizing_constant(spec: PosteriorSpec) -> float:
    """C_Z = sum_i w_i exp(-phi_i) / z_i"""
    log_c = log_normalizing_constant(spec)
    if not math.isfinite(log_c):
        raise DegeneratePosteriorError(f"log C_Z is not finite ({log_c})")
    try:
        c_z = math.exp(log_c)
    except OverflowError as e:
        raise DegeneratePosteriorError(f"C_Z overflows (log C_Z = {log_c:.6g})") from e
    if not (c_z > 0 and math.isfinite(c_z)):
        raise DegeneratePosteriorError(f"C_Z is degenerate ({c_z})")
    return c_z


def build_posterior(spec: PosteriorSpec) -> Posterior:
    """Exact grid posterior for the given Phi and Z; density is 0 off the mu-support"""
    c_z = normalizing_constant(spec)
    log_c = log_normalizing_constant(spec)
    support = spec.grid.support
    density = np.zeros(spec.grid.n)
    density[support] = np.exp(_log_terms(spec)[support] - log_c)
    masses = density * spec.grid.quad_weights
    logger.debug("posterior.built", n=spec.grid.n, log_c_z=log_c)
    return Posterior(
        grid=spec.grid,
        density=_frozen_array(density),
        c_z=c_z,
        atom_masses=_frozen_array(masses),
        log_c_z=log_c,
    )


def conjugate_exponent(p: float) -> float:
    """q = p/(p-1) with the conventions q(1) = inf and q(inf) = 1"""
    if p == math.inf:
        return 1.0
    if not p >= 1:
        raise ValidationError(f"Hoelder exponent must lie in [1, inf], got {p}")
    if p == 1:
        return math.inf
    return p / (p - 1.0)


def _measure_weights(measure) -> np.ndarray:
    if isinstance(measure, Posterior):
        return measure.atom_masses
    if isinstance(measure, ThetaGrid):
        return measure.quad_weights
    return np.asarray(measure, dtype=float)


def lp_norm(values, measure: Union[Posterior, ThetaGrid, np.ndarray], p: float) -> float:
    """
    ||f||_{nu,p} on the grid. measure is a Posterior (atom masses), a ThetaGrid
    (mu itself) or a raw weight array. p = inf is the max over nodes with
    positive mass.
    """
    f = np.abs(np.asarray(values, dtype=float))
    w = _measure_weights(measure)
    if f.shape != w.shape:
        raise ValidationError(f"values length {f.size} != measure length {w.size}")
    if p == math.inf:
        mask = w > 0
        return float(f[mask].max()) if mask.any() else 0.0
    if not p >= 1:
        raise ValidationError(f"p must be >= 1 or inf, got {p}")
    if p == 1:
        return float(np.dot(w, f))
    scale = f.max()
    if scale == 0:
        return 0.0
    # scaled to keep |f|^p finite for large p
    return float(scale * np.dot(w, (f / scale) ** p) ** (1.0 / p))
