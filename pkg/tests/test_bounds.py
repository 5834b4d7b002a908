"""
tests/test_bounds.py
Deterministic and expected stability bounds on the two-node example and
random grid instances
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from stability_lab.bounds import (
    ALL_BOUNDS,
    BoundEntry,
    BoundReport,
    HolderContext,
    evaluate_bounds,
    expected_tv_bound,
    expected_w1_bound,
    local_lipschitz_constant,
    moment_radius_R,
    tv_bound_basic,
    tv_bound_floor,
    tv_bound_holder,
    tv_bound_rescaled,
    tv_bound_symmetrized,
    w1_bound_eps,
    w1_bound_holder,
    w1_bound_two_term,
)
from stability_lab.errors import EnvelopeViolationError, GridMismatchError, ValidationError
from stability_lab.metrics import moment_p
from stability_lab.posterior_core import PosteriorSpec, build_grid, build_posterior, counting_grid


@pytest.fixture
def holder_ctx():
    return HolderContext(p=math.inf, K=1.0, ell=1.0)


def _random_specs(rng, n=15):
    grid = build_grid(0.0, 3.0, n)
    phi = rng.normal(scale=0.5, size=n)
    z = np.exp(rng.normal(scale=0.3, size=n))
    z_tilde = z * np.exp(rng.normal(scale=0.2, size=n))
    spec = PosteriorSpec(grid, phi, z)
    return spec, spec.with_z(z_tilde)


class TestTVBounds:

    def test_basic(self, two_node_specs):
        assert tv_bound_basic(*two_node_specs) == pytest.approx(0.5)

    def test_symmetrized(self, two_node_specs):
        assert tv_bound_symmetrized(*two_node_specs) == pytest.approx(0.5)

    def test_floor(self, two_node_specs):
        assert tv_bound_floor(*two_node_specs, ell=1.0).value == pytest.approx(1.0)

    def test_floor_inapplicable_when_ell_too_large(self, two_node_specs):
        bound = tv_bound_floor(*two_node_specs, ell=1.5)
        assert bound.applicable is False
        assert bound.value is None
        assert "exceeds" in bound.reason

    def test_rescaled_two_node(self, two_node_specs):
        rescaled = tv_bound_rescaled(*two_node_specs)
        assert rescaled.multiplier == pytest.approx(1.2)
        assert rescaled.l2 == pytest.approx(2.0 * math.sqrt(0.1), rel=1e-12)
        assert rescaled.l1 == pytest.approx(0.5, abs=1e-8)

    def test_rescaled_vanishes_for_constant_multiple(self):
        grid = build_grid(0.0, 1.0, 21)
        spec = PosteriorSpec(grid, np.linspace(0.0, 3.0, 21), np.linspace(1.0, 2.0, 21))
        rescaled = tv_bound_rescaled(spec, spec.rescaled(7.3))
        assert rescaled.l2 == pytest.approx(0.0, abs=1e-12)
        assert rescaled.l1 == pytest.approx(0.0, abs=1e-12)
        assert tv_bound_basic(spec, spec.rescaled(7.3)) > 1.0

    def test_rescaled_is_invariant_under_scaling_z_tilde(self):
        spec, spec_t = _random_specs(np.random.default_rng(21))
        first = tv_bound_rescaled(spec, spec_t)
        second = tv_bound_rescaled(spec, spec_t.rescaled(0.01))
        assert second.l2 == pytest.approx(first.l2, rel=1e-9)
        assert second.l1 == pytest.approx(first.l1, rel=1e-6)

    def test_rescaled_never_worse_than_basic(self):
        spec, spec_t = _random_specs(np.random.default_rng(22))
        rescaled = tv_bound_rescaled(spec, spec_t)
        assert rescaled.l1 <= tv_bound_basic(spec, spec_t) + 1e-12

    def test_holder(self, two_node_specs, holder_ctx):
        first, second = tv_bound_holder(*two_node_specs, holder_ctx)
        assert first.value == pytest.approx(0.5)
        assert second.value == pytest.approx(1.0)

    def test_holder_inapplicable_for_small_K(self, two_node_specs):
        first, second = tv_bound_holder(*two_node_specs, HolderContext(p=math.inf, K=0.5))
        assert not first.applicable and not second.applicable
        assert "K=" in first.reason

    def test_holder_floor_needs_ell(self, two_node_specs):
        first, second = tv_bound_holder(*two_node_specs, HolderContext(p=math.inf, K=1.0))
        assert first.applicable
        assert second.reason == "ell not supplied"

    def test_local_lipschitz(self, two_node_specs, holder_ctx):
        assert local_lipschitz_constant(*two_node_specs, holder_ctx).value == pytest.approx(1.0)

    def test_mismatched_phi(self, two_node_grid):
        a = PosteriorSpec(two_node_grid, [0.0, 0.0], [1.0, 1.0])
        b = PosteriorSpec(two_node_grid, [0.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValidationError):
            tv_bound_basic(a, b)

    def test_mismatched_grid(self, two_node_specs):
        other = PosteriorSpec(counting_grid([0.0, 2.0]), [0.0, 0.0], [1.0, 2.0])
        with pytest.raises(GridMismatchError):
            tv_bound_basic(two_node_specs[0], other)


class TestW1Bounds:

    def test_two_term(self, two_node_specs):
        bound = w1_bound_two_term(*two_node_specs)
        assert bound.term1 == pytest.approx(1 / 12)
        assert bound.term2 == pytest.approx(0.25)
        assert bound.tight == pytest.approx(1 / 3)
        assert bound.loose == pytest.approx(math.sqrt(0.125) * (1 / 3 + math.sqrt(0.5)))
        assert bound.tight <= bound.loose

    def test_eps(self, two_node_specs):
        delta = math.sqrt(0.125)
        expected = 2.0 / (1.0 - delta) * math.sqrt(0.5) * delta
        bound = w1_bound_eps(*two_node_specs)
        assert bound.value == pytest.approx(expected)
        assert bound.value == pytest.approx(0.7735, abs=5e-5)

    def test_eps_override_is_clamped(self, two_node_specs):
        assert w1_bound_eps(*two_node_specs, eps=0.99).value == pytest.approx(
            w1_bound_eps(*two_node_specs).value)
        assert w1_bound_eps(*two_node_specs, eps=0.1).value > w1_bound_eps(*two_node_specs).value

    def test_eps_inapplicable_for_large_delta(self, two_node_grid):
        spec = PosteriorSpec(two_node_grid, [0.0, 0.0], [1.0, 1.0])
        bound = w1_bound_eps(spec, spec.with_z([0.25, 0.25]))
        assert not bound.applicable
        assert ">= 1" in bound.reason

    def test_holder_corrected_and_printed(self, two_node_specs, holder_ctx):
        main, floor, printed = w1_bound_holder(*two_node_specs, holder_ctx)
        constant = 1.0 / math.sqrt(3.0) + 0.5
        assert main.value == pytest.approx(0.5 * constant)
        assert floor.value == pytest.approx(constant * 1.0)
        assert printed.value == pytest.approx(0.5 * (0.5 + 1 / 1.5) * 0.5)

    def test_holder_corrected_is_scale_invariant(self, two_node_specs, holder_ctx):
        spec, spec_t = two_node_specs
        main, _, printed = w1_bound_holder(spec, spec_t, holder_ctx)
        scaled = w1_bound_holder(spec.rescaled(4.0), spec_t.rescaled(4.0), HolderContext(p=math.inf, K=0.25))
        assert scaled[0].value == pytest.approx(main.value)
        assert scaled[2].value == pytest.approx(4.0 * printed.value)


class TestExpectedBounds:

    def test_second_form(self, two_node_specs):
        pi_z = build_posterior(two_node_specs[0])
        moments = SimpleNamespace(m1=np.full(2, 0.05), m2=np.full(2, 0.01), inv2=np.full(2, 1.1))
        first, second = expected_tv_bound(moments, pi_z)
        assert first == pytest.approx(0.1)
        assert second == pytest.approx(2.0 * math.sqrt(0.011))

    def test_w1_forms(self, two_node_specs):
        pi_z = build_posterior(two_node_specs[0])
        moments = SimpleNamespace(m1=np.full(2, 0.05), m2=np.full(2, 0.01), inv2=np.full(2, 1.1),
                                  rev2=np.full(2, 0.04))
        bound = expected_w1_bound(moments, pi_z, R=0.5, replicate_deltas=[0.1, 0.5])
        assert bound.form_i.value == pytest.approx((math.sqrt(0.5) + 0.5) * math.sqrt(0.011))
        assert bound.form_ii.value == pytest.approx(2.0 / 0.5 * math.sqrt(0.5) * 0.2)
        # min over theta_0 of 0.025 * d + 0.05 * 0.5
        assert bound.pointwise.value == pytest.approx(0.025 + 0.025)

    def test_w1_forms_without_hypotheses(self, two_node_specs):
        pi_z = build_posterior(two_node_specs[0])
        moments = SimpleNamespace(m1=np.zeros(2), m2=np.zeros(2), inv2=np.ones(2))
        bound = expected_w1_bound(moments, pi_z)
        assert not bound.form_i.applicable
        assert not bound.form_ii.applicable
        assert not bound.pointwise.applicable

    def test_w1_form_ii_rejects_large_replicate(self, two_node_specs):
        pi_z = build_posterior(two_node_specs[0])
        moments = SimpleNamespace(m1=np.zeros(2), m2=np.zeros(2), inv2=np.ones(2), rev2=np.zeros(2))
        bound = expected_w1_bound(moments, pi_z, R=1.0, replicate_deltas=[1.2])
        assert not bound.form_ii.applicable

    def test_moment_validation(self, two_node_specs):
        pi_z = build_posterior(two_node_specs[0])
        with pytest.raises(ValidationError):
            expected_tv_bound(SimpleNamespace(m1=np.zeros(3), m2=np.zeros(2), inv2=np.ones(2)), pi_z)
        with pytest.raises(ValidationError):
            expected_tv_bound(SimpleNamespace(m1=np.zeros(2), m2=-np.ones(2), inv2=np.ones(2)), pi_z)

    def test_moment_radius(self, two_node_grid):
        assert moment_radius_R(two_node_grid, [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]) == pytest.approx(0.5)

    def test_moment_radius_dominates_envelope_members(self):
        rng = np.random.default_rng(8)
        grid = build_grid(0.0, 2.0, 11)
        phi = rng.normal(size=11)
        lower, upper = np.full(11, 0.5), np.full(11, 2.0)
        R = moment_radius_R(grid, phi, lower, upper)
        for _ in range(5):
            z = rng.uniform(0.5, 2.0, size=11)
            assert moment_p(build_posterior(PosteriorSpec(grid, phi, z)), 1) <= R + 1e-12

    def test_moment_radius_rejects_bad_envelopes(self, two_node_grid):
        with pytest.raises(EnvelopeViolationError):
            moment_radius_R(two_node_grid, [0.0, 0.0], [1.0, 1.0], [0.5, 1.0])


class TestBoundReport:

    def test_full_report_two_node(self, two_node_specs, holder_ctx):
        report = evaluate_bounds(*two_node_specs, holder=holder_ctx)
        assert report.true_tv == pytest.approx(1 / 3)
        assert report.true_w1 == pytest.approx(1 / 6)
        assert sorted(report.names()) == sorted(ALL_BOUNDS)
        assert report.violations() == []
        assert report.get("w1_holder_printed").dominates == "none"

    def test_without_holder_context(self, two_node_specs):
        report = evaluate_bounds(*two_node_specs)
        entry = report.get("tv_holder")
        assert entry.applicable is False
        assert entry.reason == "no Hoelder context supplied"
        assert report.get("tv_floor").value == pytest.approx(1.0)

    def test_selection(self, two_node_specs):
        report = evaluate_bounds(*two_node_specs, selection=["tv_basic", "w1_eps"])
        assert report.names() == ["tv_basic", "w1_eps"]
        with pytest.raises(ValidationError):
            evaluate_bounds(*two_node_specs, selection=["nope"])

    def test_violations_skip_inapplicable_and_reference_rows(self):
        report = BoundReport(true_tv=0.5, true_w1=0.2)
        report.add("low", 0.1, "tv")
        report.add("ok", 0.6, "tv")
        report.add("ref", 0.0, "none")
        report.entries.append(BoundEntry("na", None, "w1", False, "hypothesis"))
        assert [e.name for e in report.violations()] == ["low"]

    @pytest.mark.parametrize("seed", range(5))
    def test_random_instances_are_dominated(self, seed):
        spec, spec_t = _random_specs(np.random.default_rng(seed))
        ctx = HolderContext(p=2.0, K=1e6, ell=float(min(spec.z.min(), spec_t.z.min())))
        assert evaluate_bounds(spec, spec_t, holder=ctx).violations() == []

    def test_csv_format(self, two_node_specs, holder_ctx, tmp_path):
        path = evaluate_bounds(*two_node_specs, holder=holder_ctx).to_csv(tmp_path / "bounds.csv")
        raw = path.read_bytes()
        assert raw.startswith(b"name,value,applicable,reason,dominates,true_tv,true_w1\r\n")
        assert b"tv_basic,0.5,true,,tv," in raw
