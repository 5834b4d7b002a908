"""
stability_lab/gibbs_models.py
Finite-state Gibbs models with exact partition functions and exact sampling.

rho(x | theta) = exp(-h(x, theta)) / Z(theta) on an enumerated state space G.
The default energy is h(x, theta) = theta * H(x) (inverse temperature); a
table of h per (state, theta-node) covers the general case. Everything is
computed by full enumeration, so |G| is capped by the state budget.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from stability_lab.envelopes import EnvelopeSpec
from stability_lab.errors import (
    BudgetExceededError,
    DegeneratePosteriorError,
    ValidationError,
)
from stability_lab.posterior_core import PosteriorSpec, ThetaGrid

logger = structlog.get_logger(__name__)

MAX_STATES = 2 ** 20
SPIN_UP, SPIN_DOWN = "+", "-"
NODE_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class ObservedDatum:
    x_obs: int

    def validate(self, gm: "GibbsModel") -> None:
        if not 0 <= self.x_obs < gm.n_states:
            raise ValidationError(f"x_obs={self.x_obs} outside state space of size {gm.n_states}")


@dataclass(frozen=True, eq=False)
class GibbsModel:
    """
    Enumerated Gibbs model.

    energies holds H(x) for the parametric form theta * H(x). When h_table is
    given (shape |G| x len(theta_nodes)) it overrides it and theta must be one
    of theta_nodes.
    """
    kind: str
    energies: np.ndarray
    rows: int = 0
    cols: int = 0
    wrap: bool = False
    edges: Tuple[Tuple[int, int], ...] = ()
    h_table: Optional[np.ndarray] = None
    theta_nodes: Optional[np.ndarray] = None
    _cdf_cache: Dict[float, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("ising", "table"):
            raise ValidationError(f"unknown model kind: {self.kind!r}")
        energies = np.asarray(self.energies, dtype=float).ravel()
        energies.setflags(write=False)
        object.__setattr__(self, "energies", energies)
        if energies.size < 1:
            raise ValidationError("model needs at least one state")
        if not np.all(np.isfinite(energies)):
            raise ValidationError("energies must be finite")

        if self.h_table is not None:
            table = np.asarray(self.h_table, dtype=float)
            nodes = np.asarray(self.theta_nodes, dtype=float).ravel()
            if table.shape != (energies.size, nodes.size):
                raise ValidationError(
                    f"h_table shape {table.shape} != ({energies.size}, {nodes.size})")
            if not np.all(np.isfinite(table)):
                raise ValidationError("h_table must be finite")
            table.setflags(write=False)
            object.__setattr__(self, "h_table", table)
            object.__setattr__(self, "theta_nodes", nodes)

    @property
    def n_states(self) -> int:
        return int(self.energies.size)

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def _node_column(self, theta: float) -> int:
        hits = np.flatnonzero(np.abs(self.theta_nodes - theta) <= NODE_MATCH_TOL * max(1.0, abs(theta)))
        if hits.size == 0:
            raise ValidationError(f"theta={theta} is not a node of the energy table")
        return int(hits[0])

    def energy(self, theta: float) -> np.ndarray:
        """h(x, theta) for every state x"""
        if not math.isfinite(theta):
            raise ValidationError(f"theta must be finite, got {theta}")
        if self.h_table is not None:
            return self.h_table[:, self._node_column(theta)]
        return theta * self.energies

    def energy_of(self, states, theta: float) -> np.ndarray:
        """h(x, theta) for the given state indices"""
        states = np.asarray(states, dtype=np.int64)
        if self.h_table is not None:
            return self.h_table[states, self._node_column(theta)]
        return theta * self.energies[states]

    def boltzmann_probabilities(self, theta: float) -> np.ndarray:
        log_w = -self.energy(theta)
        w = np.exp(log_w - log_w.max())
        return w / math.fsum(w)

    def cumulative_table(self, theta: float) -> np.ndarray:
        theta = float(theta)
        cdf = self._cdf_cache.get(theta)
        if cdf is None:
            cdf = np.cumsum(self.boltzmann_probabilities(theta))
            cdf[-1] = 1.0
            cdf.setflags(write=False)
            self._cdf_cache[theta] = cdf
        return cdf

    def shifted(self, c: float) -> "GibbsModel":
        """Same model with every energy moved by c (h -> h + c on tables)"""
        table = None if self.h_table is None else self.h_table + c
        return GibbsModel(
            kind="table",
            energies=self.energies + c,
            rows=self.rows,
            cols=self.cols,
            wrap=self.wrap,
            edges=self.edges,
            h_table=table,
            theta_nodes=self.theta_nodes,
        )

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "ising":
            return {"kind": "ising", "rows": self.rows, "cols": self.cols, "wrap": self.wrap}
        data: Dict[str, Any] = {"kind": "table", "energies": self.energies.tolist()}
        if self.h_table is not None:
            data["h_table"] = self.h_table.tolist()
            data["theta_nodes"] = self.theta_nodes.tolist()
        return data


def _check_state_budget(n_states: int, max_states: int) -> None:
    if n_states > max_states:
        raise BudgetExceededError("states", n_states, max_states)


def lattice_edges(rows: int, cols: int, wrap: bool) -> List[Tuple[int, int]]:
    """Nearest-neighbour edges of a rows x cols grid, each counted once"""
    edges = set()
    for r in range(rows):
        for c in range(cols):
            site = r * cols + c
            right = (r, c + 1) if c + 1 < cols else ((r, 0) if wrap else None)
            down = (r + 1, c) if r + 1 < rows else ((0, c) if wrap else None)
            for nb in (right, down):
                if nb is None:
                    continue
                other = nb[0] * cols + nb[1]
                if other != site:
                    edges.add((min(site, other), max(site, other)))
    return sorted(edges)


def spin_matrix(n_sites: int) -> np.ndarray:
    """(2^n_sites, n_sites) spins in {-1, +1}; bit k of the state index is site k"""
    states = np.arange(2 ** n_sites, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n_sites, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)


def build_ising(rows: int, cols: int, wrap: bool = False,
                max_states: int = MAX_STATES) -> GibbsModel:
    """H(x) = -sum_{(e, e') in edges} x(e) x(e') tabulated for all 2^(rows*cols) states"""
    if rows < 1 or cols < 1:
        raise ValidationError(f"lattice must be at least 1x1, got {rows}x{cols}")
    n_sites = rows * cols
    _check_state_budget(2 ** n_sites, max_states)

    edges = lattice_edges(rows, cols, wrap)
    spins = spin_matrix(n_sites)
    energies = np.zeros(spins.shape[0], dtype=np.int64)
    for a, b in edges:
        energies -= spins[:, a].astype(np.int64) * spins[:, b]

    logger.debug("ising.built", rows=rows, cols=cols, wrap=wrap, edges=len(edges))
    return GibbsModel(kind="ising", energies=energies.astype(float), rows=rows, cols=cols,
                      wrap=wrap, edges=tuple(edges))


def build_table(energies: Sequence[float], h_table=None, theta_nodes=None,
                max_states: int = MAX_STATES) -> GibbsModel:
    energies = np.asarray(energies, dtype=float)
    _check_state_budget(energies.size, max_states)
    return GibbsModel(kind="table", energies=energies, h_table=h_table, theta_nodes=theta_nodes)


def model_from_dict(data: Dict[str, Any], max_states: int = MAX_STATES) -> GibbsModel:
    """{kind: ising, rows, cols, wrap} or {kind: table, energies[, h_table, theta_nodes]}"""
    kind = data.get("kind")
    if kind == "ising":
        return build_ising(int(data["rows"]), int(data["cols"]), bool(data.get("wrap", False)),
                           max_states=max_states)
    if kind == "table":
        return build_table(data["energies"], data.get("h_table"), data.get("theta_nodes"),
                           max_states=max_states)
    raise ValidationError(f"unknown model kind: {kind!r}")


def state_to_spins(gm: GibbsModel, index: int) -> str:
    if gm.kind != "ising":
        raise ValidationError("spin strings apply to ising models only")
    ObservedDatum(index).validate(gm)
    return "".join(SPIN_UP if (index >> k) & 1 else SPIN_DOWN for k in range(gm.n_sites))


def spins_to_state(gm: GibbsModel, spins: str) -> int:
    if gm.kind != "ising":
        raise ValidationError("spin strings apply to ising models only")
    if len(spins) != gm.n_sites or set(spins) - {SPIN_UP, SPIN_DOWN}:
        raise ValidationError(f"spin string {spins!r} does not describe {gm.n_sites} sites")
    return sum(1 << k for k, s in enumerate(spins) if s == SPIN_UP)


def observed(gm: GibbsModel, x_obs: Union[int, str]) -> ObservedDatum:
    """x_obs as a state index or a spin string"""
    if isinstance(x_obs, str):
        datum = ObservedDatum(spins_to_state(gm, x_obs))
    else:
        datum = ObservedDatum(int(x_obs))
    datum.validate(gm)
    return datum


def exact_partition(gm: GibbsModel, theta: float) -> float:
    """Z(theta) = sum_x exp(-h(x, theta)), max-shifted and summed with fsum"""
    log_w = -gm.energy(theta)
    shift = float(log_w.max())
    try:
        value = math.exp(shift) * math.fsum(np.exp(log_w - shift))
    except OverflowError as e:
        raise DegeneratePosteriorError(f"Z({theta}) overflows") from e
    if not (value > 0 and math.isfinite(value)):
        raise DegeneratePosteriorError(f"Z({theta}) is not finite and positive ({value})")
    return value


def sample_many(gm: GibbsModel, theta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """size exact draws from rho(. | theta) by inverse-CDF lookup"""
    cdf = gm.cumulative_table(theta)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, gm.n_states - 1)


def exact_sample(gm: GibbsModel, theta: float, seed: int) -> int:
    rng = np.random.Generator(np.random.Philox(seed))
    return int(sample_many(gm, theta, 1, rng)[0])


def prior_weights(grid: ThetaGrid, kind: str = "uniform", rate: float = 1.0) -> np.ndarray:
    """Prior density on the nodes: uniform (ones) or exponential(rate)"""
    if kind == "uniform":
        return np.ones(grid.n)
    if kind == "exponential":
        if not rate > 0:
            raise ValidationError(f"exponential prior rate must be positive, got {rate}")
        return rate * np.exp(-rate * grid.nodes)
    raise ValidationError(f"unknown prior: {kind!r}")


def gibbs_posterior_spec(gm: GibbsModel, x_obs: Union[int, str, ObservedDatum], grid: ThetaGrid,
                         prior: Optional[Sequence[float]] = None) -> PosteriorSpec:
    """
    phi_i = h(x_obs, theta_i), z_i = Z(theta_i); the prior density (if any)
    is folded into the quadrature weights.
    """
    datum = x_obs if isinstance(x_obs, ObservedDatum) else observed(gm, x_obs)
    datum.validate(gm)
    if prior is not None:
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (grid.n,) or np.any(prior < 0):
            raise ValidationError("prior weights must be nonnegative and aligned with the grid")
        grid = grid.with_weights(grid.quad_weights * prior)

    phi = np.array([gm.energy(t)[datum.x_obs] for t in grid.nodes])
    z = np.array([exact_partition(gm, t) for t in grid.nodes])
    return PosteriorSpec(grid, phi, z)


def envelopes_for(gm: GibbsModel, grid: Union[ThetaGrid, Sequence[float]]) -> EnvelopeSpec:
    """Tightest envelopes: min_x and max_x of exp(-h(x, theta)) at every node (or given theta)"""
    thetas = grid.nodes if isinstance(grid, ThetaGrid) else np.asarray(grid, dtype=float)
    ell, u = [], []
    for t in thetas:
        h = gm.energy(t)
        ell.append(math.exp(-float(h.max())))
        u.append(math.exp(-float(h.min())))
    return EnvelopeSpec(np.array(ell), np.array(u))

