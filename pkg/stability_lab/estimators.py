"""
stability_lab/estimators.py
Randomized recovery of the normalizing function Z.

simple-mc:  Z_N(theta) = (1/N) sum_j rho(X_j, theta),  X_j ~ nu_theta iid, fresh per node
mis:        S_N(theta) = (1/N) sum_i sum_j p_j exp(-h(X_ij, theta)) / exp(-h(X_ij, theta_j)),
            X_ij ~ rho(. | theta_j), one sample set per anchor shared by all nodes.
S_N estimates S(theta) = Z(theta) sum_j p_j / Z(theta_j), a constant multiple of Z,
which leaves the posterior unchanged.

Every (replicate, stream) pair draws from its own Philox stream keyed by
(master_seed, scheme, replicate, stream); the stream is the node index for
simple-mc and the anchor index for mis. N is not part of the key, so runs at
increasing N share their leading draws.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
import pandas as pd
import structlog

from stability_lab import gibbs_models
from stability_lab.bounds import moment_radius_R
from stability_lab.envelopes import EnvelopeSpec
from stability_lab.errors import EnvelopeViolationError, ValidationError
from stability_lab.gibbs_models import GibbsModel
from stability_lab.metrics import moment_p
from stability_lab.parallel import replicate_blocks, run_keyed
from stability_lab.posterior_core import PosteriorSpec, ThetaGrid, build_posterior, lp_norm
from stability_lab.serialization import PathLike, write_csv

logger = structlog.get_logger(__name__)

SIMPLE_MC = "simple-mc"
MIS = "mis"
SCHEME_TAGS = {SIMPLE_MC: 0, MIS: 1}
WEIGHT_SUM_TOL = 1e-12

BINARY_MAGIC = b"NSEN1"
BINARY_HEADER = struct.Struct("<5sqqqQ")


def stream_rng(master_seed: int, scheme: str, replicate: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (replicate, stream) cell"""
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=(SCHEME_TAGS[scheme], int(replicate), int(stream)))
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# sampler families for simple-mc: nu_theta, rho, exact Z, envelopes
# ---------------------------------------------------------------------------

@runtime_checkable
class SamplerFamily(Protocol):
    name: str

    def sample(self, theta: float, size: int, rng: np.random.Generator) -> np.ndarray: ...

    def rho(self, x: np.ndarray, theta: float) -> np.ndarray: ...

    def exact_z(self, theta: float) -> float: ...

    def envelope(self, thetas: Sequence[float]) -> EnvelopeSpec: ...


@dataclass(frozen=True)
class ConstantFamily:
    """rho(x, theta) = c"""
    c: float = 1.0
    name: str = "constant"

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValidationError(f"constant integrand must be positive, got {self.c}")

    def sample(self, theta, size, rng):
        return rng.random(size)

    def rho(self, x, theta):
        return np.full(np.shape(x), self.c)

    def exact_z(self, theta):
        return self.c

    def envelope(self, thetas):
        ones = np.ones(len(thetas))
        return EnvelopeSpec(self.c * ones, self.c * ones)


@dataclass(frozen=True)
class UniformExpFamily:
    """nu_theta = U(0, 1), rho(x, theta) = exp(-theta x), Z = (1 - exp(-theta)) / theta"""
    name: str = "uniform-exp"

    def sample(self, theta, size, rng):
        return rng.random(size)

    def rho(self, x, theta):
        return np.exp(-theta * np.asarray(x, dtype=float))

    def exact_z(self, theta):
        if theta == 0:
            return 1.0
        return -math.expm1(-theta) / theta

    def envelope(self, thetas):
        tail = np.exp(-np.asarray(thetas, dtype=float))
        return EnvelopeSpec(np.minimum(1.0, tail), np.maximum(1.0, tail))


@dataclass(frozen=True, eq=False)
class IsingUniformFamily:
    """nu = uniform on G, rho(x, theta) = |G| exp(-h(x, theta)), Z = partition function"""
    model: GibbsModel
    name: str = "ising-uniform"

    def sample(self, theta, size, rng):
        return rng.integers(0, self.model.n_states, size)

    def rho(self, x, theta):
        return self.model.n_states * np.exp(-self.model.energy_of(x, theta))

    def exact_z(self, theta):
        return gibbs_models.exact_partition(self.model, theta)

    def envelope(self, thetas):
        env = gibbs_models.envelopes_for(self.model, thetas)
        return EnvelopeSpec(self.model.n_states * env.ell, self.model.n_states * env.u)


def family_from_dict(data: Dict[str, Any], model: Optional[GibbsModel] = None) -> SamplerFamily:
    kind = data.get("kind")
    if kind == "constant":
        return ConstantFamily(float(data.get("c", 1.0)))
    if kind == "uniform-exp":
        return UniformExpFamily()
    if kind == "ising-uniform":
        if model is None:
            raise ValidationError("ising-uniform sampler needs a model")
        return IsingUniformFamily(model)
    raise ValidationError(f"unknown sampler family: {kind!r}")


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    anchors: Tuple[float, ...] = ()
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in SCHEME_TAGS:
            raise ValidationError(f"unknown scheme: {self.kind!r}")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == MIS:
            return {"kind": MIS, "anchors": list(self.anchors), "weights": list(self.weights)}
        return {"kind": SIMPLE_MC}


@dataclass(frozen=True, eq=False)
class NormalizerEnsemble:
    """M x n realizations Z_N(omega_m, theta_i) with seed provenance"""
    values: np.ndarray
    N: int
    master_seed: int
    scheme: SchemeSpec
    grid: ThetaGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValidationError(f"ensemble must be an M x n matrix with M >= 1, got {values.shape}")
        if values.shape[1] != self.grid.n:
            raise ValidationError(f"ensemble has {values.shape[1]} columns, grid has {self.grid.n}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("ensemble entries must be positive and finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def M(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])

    def replicate(self, m: int) -> np.ndarray:
        return self.values[m]

    def to_frame(self) -> pd.DataFrame:
        M, n = self.values.shape
        return pd.DataFrame({
            "replicate": np.repeat(np.arange(M), n),
            "node_index": np.tile(np.arange(n), M),
            "theta": np.tile(self.grid.nodes, M),
            "value": self.values.ravel(),
        })

    def to_csv(self, path: PathLike) -> Path:
        return write_csv(self.to_frame(), path)

    def to_binary(self, path: PathLike) -> Path:
        """NSEN1 dump: magic, M, n, N, seed (little-endian 64-bit), row-major float64 values"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = BINARY_HEADER.pack(BINARY_MAGIC, self.M, self.n, self.N,
                                    int(self.master_seed) & 0xFFFFFFFFFFFFFFFF)
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C"))
        return path


@dataclass(frozen=True)
class EnsembleDump:
    M: int
    n: int
    N: int
    seed: int
    values: np.ndarray


def read_ensemble_binary(path: PathLike) -> EnsembleDump:
    data = Path(path).read_bytes()
    if len(data) < BINARY_HEADER.size:
        raise ValidationError("file too short for an NSEN1 header")
    magic, M, n, N, seed = BINARY_HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise ValidationError(f"bad magic {magic!r}")
    expected = BINARY_HEADER.size + 8 * M * n
    if len(data) != expected:
        raise ValidationError(f"NSEN1 payload has {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", offset=BINARY_HEADER.size).reshape(M, n)
    return EnsembleDump(M=M, n=n, N=N, seed=seed, values=values.astype(float))


def _check_counts(N: int, M: int) -> None:
    if int(N) != N or N < 1:
        raise ValidationError(f"N must be a positive integer, got {N}")
    if int(M) != M or M < 1:
        raise ValidationError(f"M must be a positive integer, got {M}")


def _simple_mc_block(family: SamplerFamily, nodes: np.ndarray, N: int, master_seed: int,
                     replicates: range, envelope: Optional[EnvelopeSpec]) -> np.ndarray:
    out = np.empty((len(replicates), nodes.size))
    for row, m in enumerate(replicates):
        for i, theta in enumerate(nodes):
            rng = stream_rng(master_seed, SIMPLE_MC, m, i)
            r = family.rho(family.sample(theta, N, rng), theta)
            if not np.all(np.isfinite(r)):
                raise ValidationError(f"rho is not finite at node {i} (theta={theta})")
            if envelope is not None:
                envelope.check(r, i)
            out[row, i] = math.fsum(r) / N
    return out


def simple_mc_recover(family: SamplerFamily, grid: ThetaGrid, N: int, M: int, master_seed: int,
                      envelope: Optional[EnvelopeSpec] = None, jobs: int = 1) -> NormalizerEnsemble:
    """M replicates of the plain Monte Carlo estimate of Z at every node"""
    _check_counts(N, M)
    if envelope is not None and envelope.n != grid.n:
        raise ValidationError("envelope is not aligned with the grid")

    blocks = replicate_blocks(M, jobs)
    tasks = [(block.start, (family, grid.nodes, N, master_seed, block, envelope)) for block in blocks]
    values = np.vstack([part for _, part in run_keyed(_simple_mc_block, tasks, jobs)])
    if np.any(values <= 0):
        raise EnvelopeViolationError("simple-mc produced a nonpositive estimate")

    logger.debug("ensemble.generated", scheme=SIMPLE_MC, family=family.name, N=N, M=M, n=grid.n)
    return NormalizerEnsemble(values, N, master_seed, SchemeSpec(SIMPLE_MC), grid)


def _validate_mis(grid: ThetaGrid, anchors: Sequence[float], weights: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    anchors = np.asarray(anchors, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if anchors.ndim != 1 or anchors.size < 1 or anchors.shape != weights.shape:
        raise ValidationError("anchors and weights must be nonempty and of equal length")
    if np.any(weights <= 0) or np.any(weights > 1):
        raise ValidationError("anchor weights must lie in (0, 1]")
    if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise ValidationError(f"anchor weights sum to {math.fsum(weights)!r}, expected 1")
    lo, hi = grid.nodes[0], grid.nodes[-1]
    if np.any(anchors < lo) or np.any(anchors > hi):
        raise ValidationError(f"anchors must lie in the grid range [{lo}, {hi}]")
    return anchors, weights


def _mis_block(gm: GibbsModel, nodes: np.ndarray, anchors: np.ndarray, weights: np.ndarray,
               N: int, master_seed: int, replicates: range) -> np.ndarray:
    out = np.zeros((len(replicates), nodes.size))
    for row, m in enumerate(replicates):
        for j, (anchor, p_j) in enumerate(zip(anchors, weights)):
            rng = stream_rng(master_seed, MIS, m, j)
            x = gibbs_models.sample_many(gm, anchor, N, rng)
            h_anchor = gm.energy_of(x, anchor)
            for i, theta in enumerate(nodes):
                ratio = np.exp(h_anchor - gm.energy_of(x, theta))
                out[row, i] += p_j * ratio.sum() / N
    return out


def mis_recover(gm: GibbsModel, grid: ThetaGrid, anchors: Sequence[float], weights: Sequence[float],
                N: int, M: int, master_seed: int, jobs: int = 1) -> NormalizerEnsemble:
    """M replicates of the multiple-importance-sampling estimate S_N at every node"""
    _check_counts(N, M)
    anchors, weights = _validate_mis(grid, anchors, weights)

    blocks = replicate_blocks(M, jobs)
    tasks = [(block.start, (gm, grid.nodes, anchors, weights, N, master_seed, block)) for block in blocks]
    values = np.vstack([part for _, part in run_keyed(_mis_block, tasks, jobs)])

    logger.debug("ensemble.generated", scheme=MIS, anchors=anchors.size, N=N, M=M, n=grid.n)
    scheme = SchemeSpec(MIS, tuple(anchors.tolist()), tuple(weights.tolist()))
    return NormalizerEnsemble(values, N, master_seed, scheme, grid)


def mis_truth(gm: GibbsModel, grid: ThetaGrid, anchors: Sequence[float],
              weights: Sequence[float]) -> np.ndarray:
    """S(theta_i) = Z(theta_i) sum_j p_j / Z(theta_j)"""
    anchors, weights = _validate_mis(grid, anchors, weights)
    z_anchor = np.array([gibbs_models.exact_partition(gm, a) for a in anchors])
    scale = math.fsum(weights / z_anchor)
    return np.array([gibbs_models.exact_partition(gm, t) for t in grid.nodes]) * scale


# ---------------------------------------------------------------------------
# moments of Q = Z_N / Z
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QMoments:
    """Per-node empirical moments across replicates, with standard errors"""
    m1: np.ndarray         # E|Z/Z_N - 1|
    m2: np.ndarray         # E|Z_N/Z - 1|^2
    inv2: np.ndarray       # E[(Z/Z_N)^2]
    rev2: np.ndarray       # E|Z/Z_N - 1|^2
    mean_inv: np.ndarray   # E[Z/Z_N]
    mean_value: np.ndarray
    se_m1: np.ndarray
    se_m2: np.ndarray
    se_inv2: np.ndarray
    se_rev2: np.ndarray
    M: int


def _replicate_mean_se(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over the replicate axis, pairwise-summed per node"""
    by_node = np.ascontiguousarray(samples.T)
    M = by_node.shape[1]
    mean = by_node.sum(axis=1) / M
    if M < 2:
        return mean, np.zeros_like(mean)
    dev = by_node - mean[:, None]
    var = (dev * dev).sum(axis=1) / (M - 1)
    return mean, np.sqrt(var / M)


def q_moments(ensemble: NormalizerEnsemble, truth) -> QMoments:
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (ensemble.n,):
        raise ValidationError(f"truth has length {truth.size}, ensemble has {ensemble.n} nodes")
    if np.any(truth <= 0) or not np.all(np.isfinite(truth)):
        raise ValidationError("truth must be positive and finite at every node")

    q = ensemble.values / truth
    inv = 1.0 / q
    m1, se_m1 = _replicate_mean_se(np.abs(inv - 1.0))
    m2, se_m2 = _replicate_mean_se((q - 1.0) ** 2)
    inv2, se_inv2 = _replicate_mean_se(inv ** 2)
    rev2, se_rev2 = _replicate_mean_se((inv - 1.0) ** 2)
    mean_inv, _ = _replicate_mean_se(inv)
    mean_value, _ = _replicate_mean_se(ensemble.values)
    return QMoments(m1=m1, m2=m2, inv2=inv2, rev2=rev2, mean_inv=mean_inv, mean_value=mean_value,
                    se_m1=se_m1, se_m2=se_m2, se_inv2=se_inv2, se_rev2=se_rev2, M=ensemble.M)


def replicate_deltas(ensemble: NormalizerEnsemble, spec: PosteriorSpec, truth=None) -> np.ndarray:
    """||Z/Z_N(omega_m) - 1||_{pi_Z,2} per replicate (truth defaults to spec.z)"""
    spec.grid.require_same(ensemble.grid)
    pi_z = build_posterior(spec)
    truth = spec.z if truth is None else np.asarray(truth, dtype=float)
    return np.array([lp_norm(truth / row - 1.0, pi_z, 2) for row in ensemble.values])


# ---------------------------------------------------------------------------
# analytic envelope bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeMomentBounds:
    """
    Per-node analytic bounds on E|Q_1 - 1|^2 and E[Q_1^-2], and the assembled
    expected-distance coefficients: E tv <= tv_coefficient / sqrt(N),
    E W1 <= w1_coefficient / sqrt(N).
    """
    m2_bound: np.ndarray
    inv2_bound: np.ndarray
    tv_coefficient: float
    w1_coefficient: float
    R: float
    mis_factor: float = 1.0
    estimate_envelope: Optional[EnvelopeSpec] = field(default=None, repr=False)

    def tv_bound(self, N: int) -> float:
        return self.tv_coefficient / math.sqrt(N)

    def w1_bound(self, N: int) -> float:
        return self.w1_coefficient / math.sqrt(N)


def mis_envelope(env_nodes: EnvelopeSpec, env_anchors: EnvelopeSpec,
                 weights: Sequence[float]) -> Tuple[EnvelopeSpec, float]:
    """
    ell(theta) sum_j p_j/u(theta_j) <= S_N(theta) <= u(theta) sum_k p_k/ell(theta_k),
    together with the factor (sum_j p_j^2/ell(theta_j)^2)^(1/2) / sum_k p_k/u(theta_k).
    """
    p = np.asarray(weights, dtype=float)
    lower = math.fsum(p / env_anchors.u)
    upper = math.fsum(p / env_anchors.ell)
    factor = math.sqrt(math.fsum(p ** 2 / env_anchors.ell ** 2)) / lower
    return EnvelopeSpec(env_nodes.ell * lower, env_nodes.u * upper), factor


def envelope_moment_bounds(env: EnvelopeSpec, truth, spec: PosteriorSpec, scheme: SchemeSpec,
                           anchor_env: Optional[EnvelopeSpec] = None) -> EnvelopeMomentBounds:
    """
    simple-mc: m2 <= u^2/Z^2, inv2 <= Z^2/ell^2,
        E tv <= (2/sqrt(N)) ||u/ell||_{pi_Z,1},
        E W1 <= (R + |pi_Z|^(2))/sqrt(N) ||u/ell||_{pi_Z,2}.
    mis: m2 <= (u^2/S^2) sum_j p_j^2/ell(theta_j)^2,
        inv2 <= (S^2/ell^2) (sum_k p_k/u(theta_k))^-2,
        both coefficients carry the MIS factor and R uses the S_N envelopes.
    """
    truth = np.asarray(truth, dtype=float)
    if env.n != spec.grid.n or truth.shape != (spec.grid.n,):
        raise ValidationError("envelope, truth and grid must be aligned")
    if np.any(truth <= 0):
        raise ValidationError("truth must be positive")
    pi_z = build_posterior(spec)
    ratio = env.ratio()

    if scheme.kind == SIMPLE_MC:
        m2_bound = env.u ** 2 / truth ** 2
        inv2_bound = truth ** 2 / env.ell ** 2
        factor, estimate_env = 1.0, env
    else:
        if anchor_env is None or anchor_env.n != len(scheme.weights):
            raise ValidationError("mis bounds need envelopes at every anchor")
        p = np.asarray(scheme.weights, dtype=float)
        estimate_env, factor = mis_envelope(env, anchor_env, p)
        m2_bound = env.u ** 2 / truth ** 2 * math.fsum(p ** 2 / anchor_env.ell ** 2)
        inv2_bound = truth ** 2 / env.ell ** 2 / math.fsum(p / anchor_env.u) ** 2

    R = moment_radius_R(spec.grid, spec.phi, estimate_env.ell, estimate_env.u)
    tv_coefficient = 2.0 * factor * lp_norm(ratio, pi_z, 1)
    w1_coefficient = factor * (R + moment_p(pi_z, 2)) * lp_norm(ratio, pi_z, 2)
    return EnvelopeMomentBounds(m2_bound=m2_bound, inv2_bound=inv2_bound,
                                tv_coefficient=tv_coefficient, w1_coefficient=w1_coefficient,
                                R=R, mis_factor=factor, estimate_envelope=estimate_env)
