"""
stability_lab/bounds.py
Stability bounds for pi_Z versus pi_Z-tilde, evaluated on grid instances.

Every bound returns a value together with its applicability; a failed
hypothesis is a result (BoundValue.applicable = False + reason), not an error.
BoundReport collects the values next to the true distances they dominate.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from scipy.optimize import minimize_scalar

from stability_lab.errors import EnvelopeViolationError, ValidationError
from stability_lab.metrics import moment_p, tv_distance, w1_distance
from stability_lab.posterior_core import (
    Posterior,
    PosteriorSpec,
    ThetaGrid,
    build_posterior,
    conjugate_exponent,
    lp_norm,
)
from stability_lab.serialization import PathLike, format_float, write_csv

logger = structlog.get_logger(__name__)

DOMINATION_TOLERANCE = 1e-9
RESCALE_SEARCH_HALF_WIDTH = 5.0
RESCALE_XATOL = 1e-10

REPORT_COLUMNS = ["name", "value", "applicable", "reason", "dominates", "true_tv", "true_w1"]


@dataclass(frozen=True)
class BoundValue:
    value: Optional[float]
    applicable: bool = True
    reason: str = ""

    @classmethod
    def not_applicable(cls, reason: str) -> "BoundValue":
        return cls(None, False, reason)


@dataclass(frozen=True)
class BoundEntry:
    name: str
    value: Optional[float]
    dominates: str          # tv | w1 | expected-tv | expected-w1 | none
    applicable: bool = True
    reason: str = ""


@dataclass
class BoundReport:
    """Named bound values, their applicability, and the true distances"""
    entries: List[BoundEntry] = field(default_factory=list)
    true_tv: Optional[float] = None
    true_w1: Optional[float] = None

    def add(self, name: str, bound, dominates: str) -> None:
        if isinstance(bound, BoundValue):
            self.entries.append(BoundEntry(name, bound.value, dominates, bound.applicable, bound.reason))
        else:
            self.entries.append(BoundEntry(name, float(bound), dominates))

    def get(self, name: str) -> BoundEntry:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def violations(self, tolerance: float = DOMINATION_TOLERANCE) -> List[BoundEntry]:
        """Applicable entries whose value falls below the distance they claim to dominate"""
        truth = {"tv": self.true_tv, "w1": self.true_w1}
        failed = []
        for entry in self.entries:
            target = truth.get(entry.dominates)
            if not entry.applicable or entry.value is None or target is None:
                continue
            if entry.value < target - tolerance:
                failed.append(entry)
        return failed

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "name": e.name,
            "value": format_float(e.value),
            "applicable": "true" if e.applicable else "false",
            "reason": e.reason,
            "dominates": e.dominates,
            "true_tv": format_float(self.true_tv),
            "true_w1": format_float(self.true_w1),
        } for e in self.entries]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path: PathLike):
        return write_csv(self.to_frame(), path)


@dataclass(frozen=True)
class HolderContext:
    """Hoelder data: ||exp(-Phi)/Z||_{mu,p} <= K and optionally ell <= inf Z-tilde"""
    p: float
    K: float
    ell: Optional[float] = None

    def __post_init__(self):
        if not (self.p >= 1):
            raise ValidationError(f"Hoelder p must lie in [1, inf], got {self.p}")
        if not (self.K > 0):
            raise ValidationError(f"K must be positive, got {self.K}")
        if self.ell is not None and not (self.ell > 0):
            raise ValidationError(f"ell must be positive, got {self.ell}")

    @property
    def q(self) -> float:
        return conjugate_exponent(self.p)

    def weighted_inverse_norm(self, spec: PosteriorSpec) -> float:
        """||exp(-Phi)/Z||_{mu,p} on the grid"""
        with np.errstate(over="ignore"):
            g = np.exp(-spec.phi) / spec.z
        return lp_norm(g, spec.grid, self.p)

    def k_reason(self, *specs: PosteriorSpec) -> str:
        """Empty string when K dominates every weighted norm, else the reason"""
        for label, spec in zip(("Z", "Z_tilde"), specs):
            actual = self.weighted_inverse_norm(spec)
            if not actual <= self.K * (1 + 1e-12):
                return f"K={self.K:.6g} < ||exp(-Phi)/{label}||_mu,p = {actual:.6g}"
        return ""

    def ell_reason(self, z: np.ndarray) -> str:
        if self.ell is None:
            return "ell not supplied"
        if self.ell > z.min() * (1 + 1e-12):
            return f"ell={self.ell:.6g} exceeds min Z_tilde = {z.min():.6g}"
        return ""


@dataclass(frozen=True)
class RescaledBound:
    l1: float            # 2 inf_a ||a Z/Z_t - 1||_{pi_Z,1}
    l2: float            # 2 ||a* Z/Z_t - 1||_{pi_Z,2}
    multiplier: float    # a* = ||Z/Z_t||_1 / ||Z/Z_t||_2^2 (c_tilde* = 1/a*)
    l1_multiplier: float


@dataclass(frozen=True)
class TwoTermBound:
    tight: float
    loose: float
    term1: float
    term2: float


@dataclass(frozen=True)
class ExpectedW1Bound:
    form_i: BoundValue
    form_ii: BoundValue
    pointwise: BoundValue


class MomentArrays(Protocol):
    m1: np.ndarray
    m2: np.ndarray
    inv2: np.ndarray


def _pair(spec_z: PosteriorSpec, spec_zt: PosteriorSpec) -> Tuple[Posterior, np.ndarray]:
    spec_z.grid.require_same(spec_zt.grid)
    if not np.array_equal(spec_z.phi, spec_zt.phi):
        raise ValidationError("Z and Z_tilde specs must share Phi")
    return build_posterior(spec_z), spec_z.z / spec_zt.z


def tv_bound_basic(spec_z: PosteriorSpec, spec_zt: PosteriorSpec) -> float:
    """2 ||Z/Z_tilde - 1||_{pi_Z,1}"""
    pi_z, ratio = _pair(spec_z, spec_zt)
    return 2.0 * lp_norm(ratio - 1.0, pi_z, 1)


def tv_bound_rescaled(spec_z: PosteriorSpec, spec_zt: PosteriorSpec) -> RescaledBound:
    """
    Rescaling-invariant TV bounds, pi_{Z_t} = pi_{c Z_t} for every c > 0.

    L2: the multiplier a applied to Z/Z_t has the closed-form optimum
    a* = ||r||_1 / ||r||_2^2, where ||a* r - 1||_2^2 = 1 - ||r||_1^2 / ||r||_2^2;
    the norm is evaluated directly since the difference form loses digits
    near 0. L1: bounded Brent search over log a around log a*,
    never worse than a* or a = 1.
    """
    pi_z, ratio = _pair(spec_z, spec_zt)
    r1 = lp_norm(ratio, pi_z, 1)
    r2_sq = lp_norm(ratio, pi_z, 2) ** 2
    a_star = r1 / r2_sq
    l2 = 2.0 * lp_norm(a_star * ratio - 1.0, pi_z, 2)

    def l1_at(log_a: float) -> float:
        return lp_norm(math.exp(log_a) * ratio - 1.0, pi_z, 1)

    centre = math.log(a_star)
    result = minimize_scalar(
        l1_at,
        bounds=(centre - RESCALE_SEARCH_HALF_WIDTH, centre + RESCALE_SEARCH_HALF_WIDTH),
        method="bounded",
        options={"xatol": RESCALE_XATOL},
    )
    candidates = [(float(result.fun), float(result.x)), (l1_at(centre), centre), (l1_at(0.0), 0.0)]
    best, best_log_a = min(candidates)
    return RescaledBound(l1=2.0 * best, l2=l2, multiplier=a_star, l1_multiplier=math.exp(best_log_a))


def tv_bound_symmetrized(spec_z: PosteriorSpec, spec_zt: PosteriorSpec) -> float:
    """2 min(||Z_t/Z - 1||_{pi_Zt,1}, ||Z/Z_t - 1||_{pi_Z,1})"""
    pi_z, ratio = _pair(spec_z, spec_zt)
    pi_zt = build_posterior(spec_zt)
    forward = lp_norm(ratio - 1.0, pi_z, 1)
    reverse = lp_norm(1.0 / ratio - 1.0, pi_zt, 1)
    return 2.0 * min(forward, reverse)


def tv_bound_floor(spec_z: PosteriorSpec, spec_zt: PosteriorSpec, ell: float) -> BoundValue:
    """(2/ell) ||Z_t - Z||_{pi_Z,1}, valid when inf Z_t >= ell"""
    pi_z, _ = _pair(spec_z, spec_zt)
    if not (ell > 0):
        return BoundValue.not_applicable(f"ell must be positive, got {ell}")
    if ell > spec_zt.z.min() * (1 + 1e-12):
        return BoundValue.not_applicable(f"ell={ell:.6g} exceeds min Z_tilde = {spec_zt.z.min():.6g}")
    return BoundValue(2.0 / ell * lp_norm(spec_zt.z - spec_z.z, pi_z, 1))


def tv_bound_holder(spec_z: PosteriorSpec, spec_zt: PosteriorSpec,
                    ctx: HolderContext) -> Tuple[BoundValue, BoundValue]:
    """
    (2K/C_Z) ||Z/Z_t - 1||_{mu,q} and, given ell, (2K/(ell C_Z)) ||Z - Z_t||_{mu,q}
    with q = p/(p-1).
    """
    pi_z, ratio = _pair(spec_z, spec_zt)
    reason = ctx.k_reason(spec_z)
    if reason:
        na = BoundValue.not_applicable(reason)
        return na, na

    grid, q = spec_z.grid, ctx.q
    first = BoundValue(2.0 * ctx.K / pi_z.c_z * lp_norm(ratio - 1.0, grid, q))
    ell_reason = ctx.ell_reason(spec_zt.z)
    if ell_reason:
        return first, BoundValue.not_applicable(ell_reason)
    second = BoundValue(2.0 * ctx.K / (ctx.ell * pi_z.c_z) * lp_norm(spec_z.z - spec_zt.z, grid, q))
    return first, second


def local_lipschitz_constant(spec_z: PosteriorSpec, spec_zt: PosteriorSpec,
                             ctx: HolderContext) -> BoundValue:
    """
    R_Z = 2K/(ell C_Z) for Z, Z_t in the class of functions >= ell with
    ||exp(-Phi)/.||_{mu,p} <= K; class membership is checked on the grid only.
    """
    pi_z, _ = _pair(spec_z, spec_zt)
    reason = ctx.k_reason(spec_z, spec_zt)
    if not reason and ctx.ell is None:
        reason = "ell not supplied"
    if not reason and ctx.ell > min(spec_z.z.min(), spec_zt.z.min()) * (1 + 1e-12):
        reason = f"ell={ctx.ell:.6g} exceeds min(Z, Z_tilde)"
    if reason:
        return BoundValue.not_applicable(reason)
    return BoundValue(2.0 * ctx.K / (ctx.ell * pi_z.c_z))


def w1_bound_two_term(spec_z: PosteriorSpec, spec_zt: PosteriorSpec) -> TwoTermBound:
    """
    ||Z/Z_t - 1||_{pi_Z,1} |pi_Zt|^(1) + ||Z/Z_t - 1||_{pi_Z,2} |pi_Z|^(2), plus the
    looser ||Z/Z_t - 1||_{pi_Z,2} (|pi_Zt|^(1) + |pi_Z|^(2)).
    """
    pi_z, ratio = _pair(spec_z, spec_zt)
    pi_zt = build_posterior(spec_zt)
    n1 = lp_norm(ratio - 1.0, pi_z, 1)
    n2 = lp_norm(ratio - 1.0, pi_z, 2)
    m_zt = moment_p(pi_zt, 1)
    m_z = moment_p(pi_z, 2)
    term1, term2 = n1 * m_zt, n2 * m_z
    return TwoTermBound(tight=term1 + term2, loose=n2 * (m_zt + m_z), term1=term1, term2=term2)


def w1_bound_eps(spec_z: PosteriorSpec, spec_zt: PosteriorSpec,
                 eps: Optional[float] = None) -> BoundValue:
    """
    (2/eps) |pi_Z|^(2) delta with delta = ||Z/Z_t - 1||_{pi_Z,2} <= 1 - eps.

    eps defaults to the largest admissible value 1 - delta; an override is
    clamped to it.
    """
    pi_z, ratio = _pair(spec_z, spec_zt)
    delta = lp_norm(ratio - 1.0, pi_z, 2)
    if not delta < 1.0:
        return BoundValue.not_applicable(f"||Z/Z_tilde - 1||_pi_Z,2 = {delta:.6g} >= 1")
    admissible = 1.0 - delta
    if eps is None:
        eps = admissible
    elif not 0 < eps < 1:
        raise ValidationError(f"eps must lie in (0, 1), got {eps}")
    eps = min(eps, admissible)
    return BoundValue(2.0 / eps * moment_p(pi_z, 2) * delta)


def w1_bound_holder(spec_z: PosteriorSpec, spec_zt: PosteriorSpec,
                    ctx: HolderContext) -> Tuple[BoundValue, BoundValue, BoundValue]:
    """
    Hoelder form of the two-term W1 bound with raw mu-moments, q = p/(p-1):

        K |mu|^(2q) (1/sqrt(C_Z C_Zt) + 1/C_Z) ||Z/Z_t - 1||_{mu,2q}

    and the ell-variant with ||Z - Z_t||_{mu,2q} / ell. The third value is the
    constant as commonly printed, K |mu|^(2q)/C_Z (1/C_Z + 1/C_Zt); it changes
    under Z -> cZ and is reported for reference only.
    """
    pi_z, ratio = _pair(spec_z, spec_zt)
    reason = ctx.k_reason(spec_z, spec_zt)
    if reason:
        na = BoundValue.not_applicable(reason)
        return na, na, na

    c_z = pi_z.c_z
    c_zt = build_posterior(spec_zt).c_z
    order = 2.0 * ctx.q
    mu_moment = moment_p(spec_z.grid, order)
    if not math.isfinite(mu_moment):
        na = BoundValue.not_applicable("mu-moment is infinite")
        return na, na, na

    norm = lp_norm(ratio - 1.0, spec_z.grid, order)
    constant = ctx.K * mu_moment * (1.0 / math.sqrt(c_z * c_zt) + 1.0 / c_z)
    printed = BoundValue(ctx.K * mu_moment / c_z * (1.0 / c_z + 1.0 / c_zt) * norm)
    main = BoundValue(constant * norm)

    ell_reason = ctx.ell_reason(spec_zt.z)
    if ell_reason:
        return main, BoundValue.not_applicable(ell_reason), printed
    floor = BoundValue(constant / ctx.ell * lp_norm(spec_z.z - spec_zt.z, spec_z.grid, order))
    return main, floor, printed


def _check_moments(moments: MomentArrays, pi_z: Posterior, names: Sequence[str]) -> None:
    for name in names:
        arr = np.asarray(getattr(moments, name), dtype=float)
        if arr.shape != (pi_z.n,):
            raise ValidationError(f"moment {name} has length {arr.size}, grid has {pi_z.n}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValidationError(f"moment {name} must be finite and nonnegative")


def expected_tv_bound(moments: MomentArrays, pi_z: Posterior) -> Tuple[float, float]:
    """
    2 int E|Z/Z_t - 1| dpi_Z and its Cauchy-Schwarz relaxation
    2 int sqrt(E|Z_t/Z - 1|^2 E[(Z/Z_t)^2]) dpi_Z.
    """
    _check_moments(moments, pi_z, ("m1", "m2", "inv2"))
    first = 2.0 * pi_z.mean(moments.m1)
    second = 2.0 * pi_z.mean(np.sqrt(np.asarray(moments.m2) * np.asarray(moments.inv2)))
    return first, second


def expected_w1_bound(moments: MomentArrays, pi_z: Posterior, R: Optional[float] = None,
                      replicate_deltas: Optional[Iterable[float]] = None) -> ExpectedW1Bound:
    """
    (i)  (|pi_Z|^(2) + R) (int E|Z_t/Z - 1|^2 E[(Z/Z_t)^2] dpi_Z)^(1/2), needs
         |pi_{Z_t(omega)}|^(1) <= R;
    (ii) (2/eps) |pi_Z|^(2) (int E|Z/Z_t - 1|^2 dpi_Z)^(1/2), needs
         ||Z/Z_t(omega) - 1||_{pi_Z,2} <= 1 - eps for every replicate.

    The pointwise value min_{theta_0} int E|Z/Z_t - 1| (d(theta, theta_0) + R) dpi_Z
    carries the hypotheses of (i).
    """
    _check_moments(moments, pi_z, ("m1", "m2", "inv2"))
    m_z2 = moment_p(pi_z, 2)

    if R is None:
        form_i = pointwise = BoundValue.not_applicable("no radius R supplied")
    elif not (R >= 0) or not math.isfinite(R):
        form_i = pointwise = BoundValue.not_applicable(f"radius R={R} is not finite")
    else:
        integrand = np.asarray(moments.m2) * np.asarray(moments.inv2)
        form_i = BoundValue((m_z2 + R) * math.sqrt(pi_z.mean(integrand)))
        weighted = pi_z.atom_masses * np.asarray(moments.m1)
        dist = pi_z.grid.distance_matrix()
        pointwise = BoundValue(float((dist @ weighted).min() + R * weighted.sum()))

    rev2 = getattr(moments, "rev2", None)
    deltas = None if replicate_deltas is None else np.asarray(list(replicate_deltas), dtype=float)
    if rev2 is None:
        form_ii = BoundValue.not_applicable("E|Z/Z_tilde - 1|^2 not supplied")
    elif deltas is None or deltas.size == 0:
        form_ii = BoundValue.not_applicable("no per-replicate certificate supplied")
    else:
        _check_moments(moments, pi_z, ("rev2",))
        eps = 1.0 - float(deltas.max())
        if not eps > 0:
            form_ii = BoundValue.not_applicable(
                f"replicate with ||Z/Z_tilde - 1||_pi_Z,2 = {deltas.max():.6g} >= 1")
        else:
            form_ii = BoundValue(2.0 / eps * m_z2 * math.sqrt(pi_z.mean(rev2)))

    return ExpectedW1Bound(form_i=form_i, form_ii=form_ii, pointwise=pointwise)


def moment_radius_R(grid: ThetaGrid, phi, ell_env, u_env) -> float:
    """
    R = min_{theta_0} int d(theta_0, .) exp(-Phi)/ell dmu / int exp(-Phi)/u dmu.

    Any Z_t with ell <= Z_t <= u node-wise satisfies |pi_{Z_t}|^(1) <= R.
    """
    phi = np.asarray(phi, dtype=float)
    ell = np.asarray(ell_env, dtype=float)
    u = np.asarray(u_env, dtype=float)
    if not (phi.shape == ell.shape == u.shape == (grid.n,)):
        raise ValidationError("phi and envelopes must be aligned with the grid")
    if np.any(ell <= 0) or np.any(u < ell * (1 - 1e-12)):
        raise EnvelopeViolationError("envelopes must satisfy 0 < ell <= u node-wise")

    # common exp(-min Phi) factor cancels in the ratio
    tilt = np.exp(-(phi - phi.min()))
    w = grid.quad_weights
    numerator = (grid.distance_matrix() @ (w * tilt / ell)).min()
    denominator = float(np.dot(w, tilt / u))
    return float(numerator / denominator)


ALL_BOUNDS = (
    "tv_basic", "tv_rescaled_l1", "tv_rescaled_l2", "tv_symmetrized", "tv_floor",
    "tv_holder", "tv_holder_floor", "tv_local_lipschitz",
    "w1_two_term", "w1_two_term_loose", "w1_eps",
    "w1_holder", "w1_holder_floor", "w1_holder_printed",
)


def evaluate_bounds(spec_z: PosteriorSpec, spec_zt: PosteriorSpec,
                    holder: Optional[HolderContext] = None,
                    selection: Optional[Sequence[str]] = None) -> BoundReport:
    """All (or the selected) deterministic bounds next to the true TV and W1"""
    wanted = set(ALL_BOUNDS if not selection else selection)
    unknown = wanted - set(ALL_BOUNDS)
    if unknown:
        raise ValidationError(f"unknown bound names: {sorted(unknown)}")

    pi_z, _ = _pair(spec_z, spec_zt)
    pi_zt = build_posterior(spec_zt)
    report = BoundReport(true_tv=tv_distance(pi_z, pi_zt), true_w1=w1_distance(pi_z, pi_zt))

    if "tv_basic" in wanted:
        report.add("tv_basic", tv_bound_basic(spec_z, spec_zt), "tv")
    if wanted & {"tv_rescaled_l1", "tv_rescaled_l2"}:
        rescaled = tv_bound_rescaled(spec_z, spec_zt)
        if "tv_rescaled_l1" in wanted:
            report.add("tv_rescaled_l1", rescaled.l1, "tv")
        if "tv_rescaled_l2" in wanted:
            report.add("tv_rescaled_l2", rescaled.l2, "tv")
    if "tv_symmetrized" in wanted:
        report.add("tv_symmetrized", tv_bound_symmetrized(spec_z, spec_zt), "tv")
    if "tv_floor" in wanted:
        ell = holder.ell if holder is not None and holder.ell is not None else float(spec_zt.z.min())
        report.add("tv_floor", tv_bound_floor(spec_z, spec_zt, ell), "tv")

    holder_names = {"tv_holder", "tv_holder_floor", "tv_local_lipschitz",
                    "w1_holder", "w1_holder_floor", "w1_holder_printed"}
    if holder is None:
        for name in ALL_BOUNDS:
            if name in wanted and name in holder_names:
                dominates = "none" if name == "w1_holder_printed" else name.split("_", 1)[0]
                report.add(name, BoundValue.not_applicable("no Hoelder context supplied"), dominates)
    else:
        if wanted & {"tv_holder", "tv_holder_floor"}:
            first, second = tv_bound_holder(spec_z, spec_zt, holder)
            if "tv_holder" in wanted:
                report.add("tv_holder", first, "tv")
            if "tv_holder_floor" in wanted:
                report.add("tv_holder_floor", second, "tv")
        if "tv_local_lipschitz" in wanted:
            r_z = local_lipschitz_constant(spec_z, spec_zt, holder)
            if r_z.applicable:
                distance = lp_norm(spec_z.z - spec_zt.z, spec_z.grid, holder.q)
                r_z = BoundValue(r_z.value * distance)
            report.add("tv_local_lipschitz", r_z, "tv")

    if wanted & {"w1_two_term", "w1_two_term_loose"}:
        two_term = w1_bound_two_term(spec_z, spec_zt)
        if "w1_two_term" in wanted:
            report.add("w1_two_term", two_term.tight, "w1")
        if "w1_two_term_loose" in wanted:
            report.add("w1_two_term_loose", two_term.loose, "w1")
    if "w1_eps" in wanted:
        report.add("w1_eps", w1_bound_eps(spec_z, spec_zt), "w1")

    if holder is not None and wanted & {"w1_holder", "w1_holder_floor", "w1_holder_printed"}:
        main, floor, printed = w1_bound_holder(spec_z, spec_zt, holder)
        if "w1_holder" in wanted:
            report.add("w1_holder", main, "w1")
        if "w1_holder_floor" in wanted:
            report.add("w1_holder_floor", floor, "w1")
        if "w1_holder_printed" in wanted:
            report.add("w1_holder_printed", printed, "none")

    logger.debug("bounds.evaluated", entries=len(report.entries),
                 true_tv=report.true_tv, true_w1=report.true_w1)
    return report
