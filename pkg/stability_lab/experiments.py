"""
stability_lab/experiments.py
Bound reports and Monte Carlo convergence studies driven by ExperimentConfig.

Artifacts (CSV with 17 significant digits, SVG) are written under the
output directory and depend only on the configuration, so identical
configs give identical bytes whatever the worker count.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import numpy as np
import pandas as pd
import structlog
from matplotlib.figure import Figure
from scipy import stats

from stability_lab import estimators, gibbs_models
from stability_lab.bounds import BoundReport, HolderContext, evaluate_bounds, expected_tv_bound, expected_w1_bound
from stability_lab.config import ExperimentConfig
from stability_lab.envelopes import EnvelopeSpec
from stability_lab.errors import ConfigError, ValidationError
from stability_lab.estimators import (
    MIS,
    SIMPLE_MC,
    EnvelopeMomentBounds,
    NormalizerEnsemble,
    SamplerFamily,
    SchemeSpec,
)
from stability_lab.gibbs_models import GibbsModel
from stability_lab.metrics import tv_distance, w1_distance
from stability_lab.posterior_core import PosteriorSpec, build_posterior
from stability_lab.serialization import PathLike, write_csv

logger = structlog.get_logger(__name__)

CONVERGENCE_COLUMNS = [
    "N", "mean_tv", "se_tv", "mean_w1", "se_w1",
    "bound_tv_expected", "bound_w1_expected", "bound_tv_moment", "bound_w1_moment",
    "bound_w1_pointwise",
]
MIN_FIT_ROWS = 4

SVG_RC = {
    "svg.hashsalt": "stability-lab",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 10,
}


def _output_path(config: ExperimentConfig, out_dir: Optional[PathLike], suffix: str) -> Path:
    return Path(out_dir or config.output_dir) / f"{config.name}_{suffix}"


# ---------------------------------------------------------------------------
# bounds report (pair scenario)
# ---------------------------------------------------------------------------

def holder_context(config: ExperimentConfig) -> Optional[HolderContext]:
    if config.holder is None:
        return None
    try:
        return HolderContext(p=config.holder.p, K=config.holder.K, ell=config.holder.ell)
    except ValidationError as e:
        raise ConfigError(f"holder: {e}") from e


def pair_specs(config: ExperimentConfig) -> Tuple[PosteriorSpec, PosteriorSpec]:
    """Posterior specs for the explicit (Z, Z_tilde) pair"""
    if config.scenario != "pair":
        raise ConfigError(f"bounds report needs the pair scenario, got {config.scenario!r}")
    grid = config.grid.build()
    phi = config.phi_values(grid.nodes)
    for label, values in (("z", config.z), ("z_tilde", config.z_tilde)):
        if len(values) != grid.n:
            raise ConfigError(f"{label} has {len(values)} values, grid has {grid.n} nodes")
    spec_z = PosteriorSpec(grid, phi, config.z)
    return spec_z, spec_z.with_z(config.z_tilde)


def run_bounds_report(config: ExperimentConfig,
                      out_dir: Optional[PathLike] = None) -> Tuple[BoundReport, Path]:
    """Evaluate the selected bounds next to the true TV/W1 and write the report CSV"""
    spec_z, spec_zt = pair_specs(config)
    report = evaluate_bounds(spec_z, spec_zt, holder=holder_context(config), selection=config.bounds)
    path = report.to_csv(_output_path(config, out_dir, "bounds.csv"))

    logger.info("bounds.report_written", path=str(path), entries=len(report.entries),
                violations=len(report.violations()))
    return report, path


# ---------------------------------------------------------------------------
# convergence studies (simple-mc, gibbs-mis)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StudySetup:
    """Truth, posterior and recovery scheme for one convergence scenario"""
    scenario: str
    spec: PosteriorSpec
    truth: np.ndarray
    scheme: SchemeSpec
    envelope: EnvelopeSpec
    anchor_envelope: Optional[EnvelopeSpec] = None
    family: Optional[SamplerFamily] = None
    model: Optional[GibbsModel] = None
    check_envelope: bool = True

    @property
    def n_anchors(self) -> int:
        return max(1, len(self.scheme.anchors))

    def recover(self, N: int, M: int, master_seed: int, jobs: int = 1) -> NormalizerEnsemble:
        if self.scheme.kind == SIMPLE_MC:
            envelope = self.envelope if self.check_envelope else None
            return estimators.simple_mc_recover(self.family, self.spec.grid, N, M, master_seed,
                                                envelope=envelope, jobs=jobs)
        return estimators.mis_recover(self.model, self.spec.grid, self.scheme.anchors,
                                      self.scheme.weights, N, M, master_seed, jobs=jobs)

    def envelope_bounds(self) -> EnvelopeMomentBounds:
        return estimators.envelope_moment_bounds(self.envelope, self.truth, self.spec, self.scheme,
                                                 anchor_env=self.anchor_envelope)


def _build_model(config: ExperimentConfig, max_states: int) -> Optional[GibbsModel]:
    if config.model is None:
        return None
    return gibbs_models.model_from_dict(config.model.model_dump(exclude_none=True), max_states=max_states)


def prepare_study(config: ExperimentConfig, max_states: int = gibbs_models.MAX_STATES) -> StudySetup:
    """Resolve a simple-mc or gibbs-mis config into truth, envelopes and scheme"""
    if config.scenario not in (SIMPLE_MC, "gibbs-mis"):
        raise ConfigError(f"convergence study needs simple-mc or gibbs-mis, got {config.scenario!r}")
    grid = config.grid.build()
    model = _build_model(config, max_states)
    check = config.estimator.check_envelope

    if config.scenario == SIMPLE_MC:
        family = estimators.family_from_dict(config.sampler.model_dump(), model)
        truth = np.array([family.exact_z(t) for t in grid.nodes])
        if model is not None and config.x_obs is not None:
            prior = gibbs_models.prior_weights(grid, config.prior.kind, config.prior.rate)
            spec = gibbs_models.gibbs_posterior_spec(model, config.x_obs, grid, prior)
        else:
            spec = PosteriorSpec(grid, config.phi_values(grid.nodes), truth)
        return StudySetup(scenario=SIMPLE_MC, spec=spec, truth=truth, scheme=SchemeSpec(SIMPLE_MC),
                          envelope=family.envelope(grid.nodes), family=family, model=model,
                          check_envelope=check)

    prior = gibbs_models.prior_weights(grid, config.prior.kind, config.prior.rate)
    spec = gibbs_models.gibbs_posterior_spec(model, config.x_obs, grid, prior)
    anchors, weights = config.mis.anchors, config.mis.weights
    truth = estimators.mis_truth(model, spec.grid, anchors, weights)
    return StudySetup(
        scenario="gibbs-mis",
        spec=spec,
        truth=truth,
        scheme=SchemeSpec(MIS, tuple(float(a) for a in anchors), tuple(float(w) for w in weights)),
        envelope=gibbs_models.envelopes_for(model, spec.grid),
        anchor_envelope=gibbs_models.envelopes_for(model, anchors),
        model=model,
        check_envelope=check,
    )


@dataclass
class ConvergenceTable:
    """One row per N: replicate means/SEs of TV and W1 next to the expected-distance bounds"""
    frame: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=CONVERGENCE_COLUMNS))

    def __post_init__(self):
        missing = [c for c in CONVERGENCE_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValidationError(f"convergence table lacks columns {missing}")
        self.frame = self.frame[CONVERGENCE_COLUMNS].reset_index(drop=True)
        N = self.frame["N"].to_numpy()
        if np.any(np.diff(N) <= 0):
            raise ValidationError("N must be strictly increasing")
        for se in ("se_tv", "se_w1"):
            if np.any(self.frame[se].to_numpy(dtype=float) < 0):
                raise ValidationError(f"{se} must be nonnegative")

    @classmethod
    def from_rows(cls, rows: Sequence[Dict[str, Any]]) -> "ConvergenceTable":
        return cls(pd.DataFrame(list(rows), columns=CONVERGENCE_COLUMNS))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def N(self) -> np.ndarray:
        return self.frame["N"].to_numpy(dtype=float)

    def column(self, name: str) -> np.ndarray:
        if name not in CONVERGENCE_COLUMNS:
            raise ValidationError(f"unknown column {name!r}")
        return self.frame[name].to_numpy(dtype=float)

    def to_csv(self, path: PathLike) -> Path:
        frame = self.frame.astype({"N": "int64"})
        return write_csv(frame, path)


@dataclass
class ConvergenceStudy:
    table: ConvergenceTable
    csv_path: Path
    svg_path: Path
    slopes: Dict[str, float] = field(default_factory=dict)
    ensemble_paths: List[Path] = field(default_factory=list)


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    M = values.size
    mean = float(values.mean())
    if M < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(M))


def replicate_distances(setup: StudySetup, ensemble: NormalizerEnsemble) -> Tuple[np.ndarray, np.ndarray]:
    """Exact TV and W1 between pi_Z and pi_{Z_N(omega_m)} for every replicate"""
    pi_z = build_posterior(setup.spec)
    tv, w1 = np.empty(ensemble.M), np.empty(ensemble.M)
    for m, row in enumerate(ensemble.values):
        pi_m = build_posterior(setup.spec.with_z(row))
        tv[m] = tv_distance(pi_z, pi_m)
        w1[m] = w1_distance(pi_z, pi_m)
    return tv, w1


def convergence_row(setup: StudySetup, ensemble: NormalizerEnsemble,
                    env_bounds: EnvelopeMomentBounds) -> Dict[str, Any]:
    tv, w1 = replicate_distances(setup, ensemble)
    mean_tv, se_tv = _mean_se(tv)
    mean_w1, se_w1 = _mean_se(w1)

    pi_z = build_posterior(setup.spec)
    moments = estimators.q_moments(ensemble, setup.truth)
    _, tv_moment = expected_tv_bound(moments, pi_z)
    w1_expected = expected_w1_bound(moments, pi_z, R=env_bounds.R)
    w1_moment, w1_pointwise = w1_expected.form_i, w1_expected.pointwise
    return {
        "N": int(ensemble.N),
        "mean_tv": mean_tv,
        "se_tv": se_tv,
        "mean_w1": mean_w1,
        "se_w1": se_w1,
        "bound_tv_expected": env_bounds.tv_bound(ensemble.N),
        "bound_w1_expected": env_bounds.w1_bound(ensemble.N),
        "bound_tv_moment": tv_moment,
        "bound_w1_moment": w1_moment.value if w1_moment.applicable else math.nan,
        "bound_w1_pointwise": w1_pointwise.value if w1_pointwise.applicable else math.nan,
    }


def run_convergence_study(config: ExperimentConfig, jobs: int = 1, out_dir: Optional[PathLike] = None,
                          max_states: int = gibbs_models.MAX_STATES) -> ConvergenceStudy:
    """
    For every N in the schedule: an M-replicate ensemble, exact per-replicate
    distances, their means and SEs, and the analytic and moment-based bounds.
    Writes <name>_convergence.csv and <name>_convergence.svg.
    """
    setup = prepare_study(config, max_states=max_states)
    est = config.estimator
    env_bounds = setup.envelope_bounds()

    rows, ensemble_paths = [], []
    for N in est.N:
        ensemble = setup.recover(N, est.M, est.seed, jobs=jobs)
        rows.append(convergence_row(setup, ensemble, env_bounds))
        if est.export_ensembles:
            ensemble_paths.append(ensemble.to_csv(_output_path(config, out_dir, f"ensemble_N{N}.csv")))
            ensemble_paths.append(ensemble.to_binary(_output_path(config, out_dir, f"ensemble_N{N}.nsen")))
        logger.info("study.row", scenario=setup.scenario, N=N, M=est.M,
                    mean_tv=rows[-1]["mean_tv"], mean_w1=rows[-1]["mean_w1"])

    table = ConvergenceTable.from_rows(rows)
    csv_path = table.to_csv(_output_path(config, out_dir, "convergence.csv"))
    svg_path = emit_plot(table, _output_path(config, out_dir, "convergence.svg"))

    slopes = {}
    for column in ("mean_tv", "mean_w1"):
        try:
            slopes[column] = fit_rate(table, column)[0]
        except ValidationError as e:
            logger.info("study.rate_skipped", column=column, reason=str(e))
    return ConvergenceStudy(table=table, csv_path=csv_path, svg_path=svg_path,
                            slopes=slopes, ensemble_paths=ensemble_paths)


# ---------------------------------------------------------------------------
# rates and plots
# ---------------------------------------------------------------------------

def fit_rate(table: ConvergenceTable, column: str,
             min_rows: int = MIN_FIT_ROWS) -> Tuple[float, float, float]:
    """OLS of log(value) on log(N): (slope, intercept, r^2)"""
    values = table.column(column)
    if len(table) < min_rows:
        raise ValidationError(f"rate fit needs at least {min_rows} rows, got {len(table)}")
    if not np.all(values > 0):
        raise ValidationError(f"column {column} has nonpositive values")
    fit = stats.linregress(np.log(table.N), np.log(values))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)


def emit_plot(table: ConvergenceTable, path: PathLike) -> Path:
    """Log-log scatter of mean TV/W1, fitted lines (two or more rows) and bound curves"""
    if len(table) == 0:
        raise ValidationError("cannot plot an empty convergence table")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(6.4, 4.8))
        ax = fig.add_subplot()
        N = table.N
        for column, bound, colour in (("mean_tv", "bound_tv_expected", "tab:blue"),
                                      ("mean_w1", "bound_w1_expected", "tab:orange")):
            values = table.column(column)
            positive = values > 0
            label = column.replace("mean_", "").upper()
            if positive.any():
                ax.scatter(N[positive], values[positive], color=colour, label=f"mean {label}")
            if len(table) >= 2:
                try:
                    slope, intercept, _ = fit_rate(table, column, min_rows=2)
                    ax.plot(N, np.exp(intercept) * N ** slope, color=colour, linestyle="--",
                            label=f"{label} fit, slope {slope:.3f}")
                except ValidationError:
                    pass
                ax.plot(N, table.column(bound), color=colour, linestyle=":", label=f"{label} bound")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("distance")
        ax.legend(loc="best")
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
