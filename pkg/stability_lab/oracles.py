"""
stability_lab/oracles.py
Brute-force oracle suites run by `stability-lab oracle`.

Each suite checks the library against an independent code path: hand
enumeration, a naive double loop, POT's network simplex, scipy's
wasserstein_distance or a chi-square goodness-of-fit test.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import stats

from stability_lab import gibbs_models
from stability_lab.bounds import (
    HolderContext,
    evaluate_bounds,
    tv_bound_basic,
    tv_bound_rescaled,
    w1_bound_two_term,
)
from stability_lab.errors import ValidationError
from stability_lab.metrics import MAX_TRANSPORT_NODES, tv_distance, wasserstein_1d, wasserstein_transport
from stability_lab.posterior_core import (
    EUCLIDEAN,
    PosteriorSpec,
    ThetaGrid,
    build_posterior,
    counting_grid,
    truncated,
)

logger = structlog.get_logger(__name__)

DEFAULT_ORACLE_SEED = 20_240_611
EXACT_TOL = 1e-12
DOMINATION_TOL = 1e-9
DUALITY_TOL = 1e-9
RESCALE_BOUND_TOL = 1e-10
RESCALE_TV_TOL = 1e-12
PARTITION_RTOL = 1e-12
NAIVE_PARTITION_RTOL = 1e-14
CHI_SQUARE_ALPHA = 1e-3
SAMPLER_DRAWS = 100_000
SAMPLER_LATTICES = ((1, 2), (2, 2), (2, 4))


@dataclass
class OracleResult:
    name: str
    passed: bool
    checks: int
    failures: int
    detail: str = ""
    elapsed_ms: int = 0


def _result(name: str, failures: List[str], checks: int) -> OracleResult:
    detail = "; ".join(failures[:3]) + (f" (+{len(failures) - 3} more)" if len(failures) > 3 else "")
    return OracleResult(name=name, passed=not failures, checks=checks, failures=len(failures), detail=detail)


def _random_grid(rng: np.random.Generator, n: int, allow_truncated: bool = True) -> ThetaGrid:
    nodes = np.cumsum(rng.uniform(0.05, 1.0, n)) + rng.uniform(-3.0, 0.0)
    weights = rng.uniform(0.1, 2.0, n)
    metric = truncated(rng.uniform(0.5, 3.0)) if allow_truncated and rng.random() < 0.25 else EUCLIDEAN
    return ThetaGrid(nodes, weights, metric)


def _random_masses(rng: np.random.Generator, grid: ThetaGrid):
    spec = PosteriorSpec(grid, rng.normal(0.0, 1.0, grid.n), np.exp(rng.normal(0.0, 1.0, grid.n)))
    return build_posterior(spec)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def two_node_fixture(rng: Optional[np.random.Generator] = None) -> OracleResult:
    """Counting measure on {0, 1}, Phi = 0, Z = (1, 1), Z_tilde = (1, 2)"""
    grid = counting_grid([0.0, 1.0])
    spec_z = PosteriorSpec(grid, [0.0, 0.0], [1.0, 1.0])
    spec_zt = spec_z.with_z([1.0, 2.0])
    pi_z, pi_zt = build_posterior(spec_z), build_posterior(spec_zt)

    # hand enumeration: masses (1/2, 1/2) and (2/3, 1/3)
    enumerated_tv = abs(0.5 - 2.0 / 3.0) + abs(0.5 - 1.0 / 3.0)
    enumerated_w1 = abs(0.5 - 2.0 / 3.0) * 1.0
    expected = {
        "true_tv": (tv_distance(pi_z, pi_zt), 1.0 / 3.0),
        "true_w1": (wasserstein_1d(pi_z, pi_zt), 1.0 / 6.0),
        "enumerated_tv": (enumerated_tv, 1.0 / 3.0),
        "enumerated_w1": (enumerated_w1, 1.0 / 6.0),
        "tv_basic": (tv_bound_basic(spec_z, spec_zt), 0.5),
        "w1_two_term": (w1_bound_two_term(spec_z, spec_zt).tight, 1.0 / 3.0),
        "w1_two_term.term1": (w1_bound_two_term(spec_z, spec_zt).term1, 1.0 / 12.0),
        "w1_two_term.term2": (w1_bound_two_term(spec_z, spec_zt).term2, 0.25),
    }
    failures = [f"{name}={got!r} expected {want!r}"
                for name, (got, want) in expected.items() if abs(got - want) > EXACT_TOL]
    return _result("two-node fixture", failures, len(expected))


def bound_validity_sweep(rng: np.random.Generator, instances: int = 500) -> OracleResult:
    """Every applicable deterministic bound dominates its true distance on random instances"""
    failures, checks = [], 0
    for k in range(instances):
        grid = _random_grid(rng, int(rng.integers(2, 65)))
        phi = rng.normal(0.0, 1.0, grid.n)
        z = np.exp(rng.normal(0.0, 1.0, grid.n))
        z_tilde = z * np.exp(rng.normal(0.0, rng.choice([0.05, 0.3, 1.0]), grid.n)) * rng.uniform(0.2, 5.0)
        spec_z = PosteriorSpec(grid, phi, z)
        spec_zt = spec_z.with_z(z_tilde)

        p = float(rng.choice([1.0, 1.5, 2.0, 4.0, math.inf]))
        unit_k = HolderContext(p=p, K=1.0)
        K = max(unit_k.weighted_inverse_norm(spec_z), unit_k.weighted_inverse_norm(spec_zt)) * (1 + 1e-9)
        holder = HolderContext(p=p, K=K, ell=float(min(z.min(), z_tilde.min())))

        report = evaluate_bounds(spec_z, spec_zt, holder=holder)
        checks += sum(1 for e in report.entries if e.applicable and e.dominates in ("tv", "w1"))
        for entry in report.violations(DOMINATION_TOL):
            failures.append(f"instance {k}: {entry.name}={entry.value:.6g}")
    return _result("bound validity sweep", failures, checks)


def duality_check(rng: np.random.Generator, pairs: int = 200,
                  max_nodes: int = MAX_TRANSPORT_NODES) -> OracleResult:
    """CDF-formula W1 against the exact transport LP and scipy's 1-D W1"""
    failures = []
    for k in range(pairs):
        grid = _random_grid(rng, int(rng.integers(2, 65)), allow_truncated=False)
        a, b = _random_masses(rng, grid), _random_masses(rng, grid)
        cdf_value = wasserstein_1d(a, b)
        lp_value = wasserstein_transport(a, b, max_nodes=max_nodes)
        scipy_value = stats.wasserstein_distance(grid.nodes, grid.nodes, a.atom_masses, b.atom_masses)
        if abs(cdf_value - lp_value) > DUALITY_TOL or abs(cdf_value - scipy_value) > DUALITY_TOL:
            failures.append(f"pair {k}: cdf={cdf_value!r} lp={lp_value!r} scipy={scipy_value!r}")
    return _result("duality", failures, 2 * pairs)


def rescaling_check(rng: np.random.Generator, constants: int = 20) -> OracleResult:
    """Z_tilde = c Z leaves the posterior unchanged; the rescaled bound must see it"""
    failures = []
    grid = _random_grid(rng, 24, allow_truncated=False)
    spec_z = PosteriorSpec(grid, rng.normal(0.0, 1.0, grid.n), np.exp(rng.normal(0.0, 1.0, grid.n)))
    pi_z = build_posterior(spec_z)
    for c in 10.0 ** rng.uniform(-3.0, 3.0, constants):
        spec_zt = spec_z.rescaled(float(c))
        rescaled = tv_bound_rescaled(spec_z, spec_zt)
        true_tv = tv_distance(pi_z, build_posterior(spec_zt))
        if rescaled.l1 > RESCALE_BOUND_TOL or rescaled.l2 > RESCALE_BOUND_TOL:
            failures.append(f"c={c:.6g}: l1={rescaled.l1:.3g} l2={rescaled.l2:.3g}")
        if true_tv > RESCALE_TV_TOL:
            failures.append(f"c={c:.6g}: true tv={true_tv:.3g}")
    return _result("rescaling", failures, 2 * constants)


def naive_ising_energies(rows: int, cols: int) -> np.ndarray:
    """H(x) by a double loop over site pairs; bit k of the state index is site k"""
    n_sites = rows * cols
    energies = np.zeros(2 ** n_sites)
    for state in range(2 ** n_sites):
        spins = [1 if (state >> k) & 1 else -1 for k in range(n_sites)]
        h = 0
        for i in range(n_sites):
            for j in range(i + 1, n_sites):
                ri, ci = divmod(i, cols)
                rj, cj = divmod(j, cols)
                if abs(ri - rj) + abs(ci - cj) == 1:
                    h -= spins[i] * spins[j]
        energies[state] = h
    return energies


def ising_ground_truth(rng: Optional[np.random.Generator] = None, betas: int = 50) -> OracleResult:
    """
    1x2: Z(beta) = 4 cosh(beta). 2x2: energies equal the naive double loop
    bit for bit, Z equals the Z of the naively enumerated table exactly, and
    agrees with a plain fsum over the 16 states.
    """
    failures, checks = [], 0
    chain = gibbs_models.build_ising(1, 2)
    for beta in np.linspace(-2.0, 2.0, betas):
        got = gibbs_models.exact_partition(chain, float(beta))
        want = 4.0 * math.cosh(beta)
        checks += 1
        if abs(got - want) > PARTITION_RTOL * want:
            failures.append(f"1x2 beta={beta:.4g}: {got!r} != 4cosh = {want!r}")

    square = gibbs_models.build_ising(2, 2)
    naive = naive_ising_energies(2, 2)
    enumerated = gibbs_models.build_table(naive)
    checks += 1
    if not np.array_equal(square.energies, naive):
        failures.append("2x2 energy table differs from the double loop")
    for beta in np.linspace(0.1, 2.0, 20):
        got = gibbs_models.exact_partition(square, float(beta))
        exact = gibbs_models.exact_partition(enumerated, float(beta))
        summed = math.fsum(math.exp(-beta * h) for h in naive)
        checks += 2
        if got != exact:
            failures.append(f"2x2 beta={beta:.4g}: {got!r} != enumerated {exact!r}")
        if abs(got - summed) > NAIVE_PARTITION_RTOL * summed:
            failures.append(f"2x2 beta={beta:.4g}: {got!r} vs naive sum {summed!r}")
    return _result("ising ground truth", failures, checks)


def sampler_chi_square(rng: np.random.Generator, draws: int = SAMPLER_DRAWS,
                       lattices: Sequence[Tuple[int, int]] = SAMPLER_LATTICES,
                       betas: Sequence[float] = (0.1, 0.3)) -> OracleResult:
    """Exact sampler frequencies against Boltzmann probabilities, lattices up to 256 states"""
    failures = []
    for rows, cols in lattices:
        model = gibbs_models.build_ising(rows, cols)
        for beta in betas:
            seed = int(rng.integers(0, 2 ** 63))
            x = gibbs_models.sample_many(model, beta, draws, np.random.Generator(np.random.Philox(seed)))
            observed = np.bincount(x, minlength=model.n_states)
            expected = draws * model.boltzmann_probabilities(beta)
            result = stats.chisquare(observed, expected)
            if result.pvalue < CHI_SQUARE_ALPHA:
                failures.append(f"{rows}x{cols} beta={beta}: chi2={result.statistic:.3g} p={result.pvalue:.3g}")
    return _result("sampler chi-square", failures, len(lattices) * len(betas))


SUITES: Dict[str, Callable[..., OracleResult]] = {
    "two-node": two_node_fixture,
    "validity": bound_validity_sweep,
    "duality": duality_check,
    "rescaling": rescaling_check,
    "ising": ising_ground_truth,
    "sampler": sampler_chi_square,
}


def run_oracles(seed: int = DEFAULT_ORACLE_SEED, suites: Optional[Sequence[str]] = None,
                max_transport_nodes: int = MAX_TRANSPORT_NODES) -> List[OracleResult]:
    """Run the selected suites (all by default), each on its own seeded stream"""
    names = list(SUITES) if not suites else list(suites)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValidationError(f"unknown oracle suites: {unknown}")

    results = []
    streams = np.random.SeedSequence(seed).spawn(len(SUITES))
    for name, stream in zip(SUITES, streams):
        if name not in names:
            continue
        rng = np.random.Generator(np.random.Philox(stream))
        start = time.time()
        if name == "duality":
            result = SUITES[name](rng, max_nodes=max_transport_nodes)
        else:
            result = SUITES[name](rng)
        result.elapsed_ms = int((time.time() - start) * 1000)
        logger.info("oracle.finished", suite=name, passed=result.passed,
                    checks=result.checks, elapsed_ms=result.elapsed_ms)
        results.append(result)
    return results


def format_results(results: Sequence[OracleResult]) -> str:
    lines = [f"{'suite':<24} {'status':<6} {'checks':>7} {'failed':>7} {'ms':>8}", "-" * 56]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<24} {status:<6} {r.checks:>7} {r.failures:>7} {r.elapsed_ms:>8}")
        if r.detail:
            lines.append(f"    {r.detail}")
    return "\n".join(lines)
