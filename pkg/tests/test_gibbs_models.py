"""
tests/test_gibbs_models.py
Enumerated Ising / table models, partition functions, exact sampling and
the inverse-temperature posterior
"""

import math

import numpy as np
import pytest

from stability_lab import gibbs_models
from stability_lab.errors import BudgetExceededError, ValidationError
from stability_lab.gibbs_models import (
    build_ising,
    build_table,
    envelopes_for,
    exact_partition,
    exact_sample,
    gibbs_posterior_spec,
    model_from_dict,
    prior_weights,
    sample_many,
    spins_to_state,
    state_to_spins,
)
from stability_lab.posterior_core import build_grid, build_posterior


class TestIsingConstruction:

    def test_two_spin_energies(self):
        gm = build_ising(1, 2)
        # bit k of the state index is site k: 0 = "--", 1 = "+-", 2 = "-+", 3 = "++"
        np.testing.assert_array_equal(gm.energies, [-1.0, 1.0, 1.0, -1.0])
        assert gm.edges == ((0, 1),)

    def test_single_spin_has_no_edges(self):
        gm = build_ising(1, 1)
        np.testing.assert_array_equal(gm.energies, [0.0, 0.0])
        assert gm.edges == ()

    def test_wrap_counts_each_edge_once(self):
        open_2x2 = build_ising(2, 2)
        wrapped_2x2 = build_ising(2, 2, wrap=True)
        assert open_2x2.edges == wrapped_2x2.edges
        assert wrapped_2x2.energies[spins_to_state(wrapped_2x2, "++++")] == -4.0

    def test_wrap_3x3_adds_periodic_edges(self):
        assert len(build_ising(3, 3).edges) == 12
        gm = build_ising(3, 3, wrap=True)
        assert len(gm.edges) == 18
        assert gm.energies[gm.n_states - 1] == -18.0

    def test_state_budget(self):
        with pytest.raises(BudgetExceededError) as exc:
            build_ising(5, 5)
        assert exc.value.budget == "states"
        with pytest.raises(BudgetExceededError):
            model_from_dict({"kind": "ising", "rows": 2, "cols": 3}, max_states=32)

    def test_spin_strings(self, ising_2x2):
        assert spins_to_state(ising_2x2, "+-+-") == 0b0101
        assert state_to_spins(ising_2x2, 0b0101) == "+-+-"
        with pytest.raises(ValidationError):
            spins_to_state(ising_2x2, "+-+")
        with pytest.raises(ValidationError):
            spins_to_state(ising_2x2, "+-x-")

    def test_model_from_dict(self):
        gm = model_from_dict({"kind": "table", "energies": [0.0, 1.0, 3.0]})
        assert gm.n_states == 3
        assert gm.to_dict() == {"kind": "table", "energies": [0.0, 1.0, 3.0]}
        assert model_from_dict(build_ising(1, 2, wrap=True).to_dict()).wrap is True
        with pytest.raises(ValidationError):
            model_from_dict({"kind": "potts"})


class TestPartitionFunction:

    def test_zero_temperature_counts_states(self, ising_2x2):
        assert exact_partition(ising_2x2, 0.0) == 16.0

    @pytest.mark.parametrize("beta", [-1.5, 0.3, 1.0, 2.0])
    def test_two_spin_cosh(self, beta):
        assert exact_partition(build_ising(1, 2), beta) == pytest.approx(4 * math.cosh(beta), rel=1e-12)

    def test_two_by_two_closed_form(self, ising_2x2):
        beta = 0.7
        expected = 2 * math.exp(4 * beta) + 12 + 2 * math.exp(-4 * beta)
        assert exact_partition(ising_2x2, beta) == pytest.approx(expected, rel=1e-14)

    def test_log_convex(self, ising_2x2):
        betas = np.linspace(-1.0, 1.5, 26)
        log_z = np.log([exact_partition(ising_2x2, b) for b in betas])
        assert np.all(np.diff(log_z, 2) >= -1e-12)

    def test_large_beta_stays_finite(self, ising_2x2):
        assert math.isfinite(exact_partition(ising_2x2, 150.0))

    def test_non_finite_theta(self, ising_2x2):
        with pytest.raises(ValidationError):
            exact_partition(ising_2x2, math.nan)


class TestTableModels:

    def test_h_table_lookup(self):
        gm = build_table([0.0, 0.0], h_table=[[0.0, 1.0], [2.0, 3.0]], theta_nodes=[0.5, 1.5])
        np.testing.assert_array_equal(gm.energy(1.5), [1.0, 3.0])
        assert exact_partition(gm, 0.5) == pytest.approx(1.0 + math.exp(-2.0))
        with pytest.raises(ValidationError):
            gm.energy(1.0)

    def test_h_table_shape(self):
        with pytest.raises(ValidationError):
            build_table([0.0, 0.0], h_table=[[0.0, 1.0]], theta_nodes=[0.5, 1.5])

    def test_shift_leaves_posterior_unchanged(self):
        gm = build_ising(1, 3)
        grid = build_grid(0.1, 2.0, 11)
        base = build_posterior(gibbs_posterior_spec(gm, 5, grid))
        moved = build_posterior(gibbs_posterior_spec(gm.shifted(3.0), 5, grid))
        np.testing.assert_allclose(moved.density, base.density, rtol=1e-12)


class TestSampling:

    def test_single_state_always_zero(self):
        gm = build_table([2.5])
        assert all(exact_sample(gm, 1.0, seed) == 0 for seed in range(10))

    def test_deterministic_given_seed(self, ising_2x2):
        assert exact_sample(ising_2x2, 0.4, 123) == exact_sample(ising_2x2, 0.4, 123)

    def test_uniform_at_zero(self, ising_2x2):
        rng = np.random.default_rng(0)
        draws = sample_many(ising_2x2, 0.0, 100_000, rng)
        freq = np.bincount(draws, minlength=16) / draws.size
        se = math.sqrt((1 / 16) * (15 / 16) / draws.size)
        assert np.all(np.abs(freq - 1 / 16) <= 5 * se)

    def test_two_spin_aligned_frequency(self):
        gm = build_ising(1, 2)
        rng = np.random.default_rng(1)
        draws = sample_many(gm, 1.0, 100_000, rng)
        p = math.e / (4 * math.cosh(1.0))
        freq = np.mean(draws == spins_to_state(gm, "++"))
        assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / draws.size)

    def test_draws_stay_in_range(self, ising_2x2):
        draws = sample_many(ising_2x2, -3.0, 5_000, np.random.default_rng(2))
        assert draws.min() >= 0 and draws.max() < ising_2x2.n_states


class TestPosteriorConstruction:

    def test_two_spin_posterior_matches_formula(self):
        gm = build_ising(1, 2)
        grid = build_grid(0.1, 2.0, 9)
        spec = gibbs_posterior_spec(gm, "++", grid)
        np.testing.assert_allclose(spec.phi, -grid.nodes)
        np.testing.assert_allclose(spec.z, 4 * np.cosh(grid.nodes), rtol=1e-13)
        density = np.exp(grid.nodes) / (4 * np.cosh(grid.nodes))
        density /= np.dot(grid.quad_weights, density)
        np.testing.assert_allclose(build_posterior(spec).density, density, rtol=1e-12)

    def test_zero_energy_datum(self):
        gm = build_ising(1, 1)
        spec = gibbs_posterior_spec(gm, 0, build_grid(0.0, 1.0, 5))
        np.testing.assert_array_equal(spec.phi, np.zeros(5))

    def test_prior_is_folded_into_weights(self, ising_2x2):
        grid = build_grid(0.1, 2.0, 9)
        prior = prior_weights(grid, "exponential", rate=2.0)
        spec = gibbs_posterior_spec(ising_2x2, "++++", grid, prior)
        np.testing.assert_allclose(spec.grid.quad_weights, grid.quad_weights * 2.0 * np.exp(-2.0 * grid.nodes))
        np.testing.assert_array_equal(prior_weights(grid), np.ones(9))
        with pytest.raises(ValidationError):
            prior_weights(grid, "exponential", rate=0.0)
        with pytest.raises(ValidationError):
            prior_weights(grid, "cauchy")

    def test_invalid_datum(self, ising_2x2):
        grid = build_grid(0.1, 2.0, 5)
        with pytest.raises(ValidationError):
            gibbs_posterior_spec(ising_2x2, 16, grid)


class TestEnvelopes:

    def test_zero_theta(self, ising_2x2):
        env = envelopes_for(ising_2x2, [0.0])
        assert env.ell[0] == 1.0 and env.u[0] == 1.0

    def test_two_spin_at_one(self):
        env = envelopes_for(build_ising(1, 2), [1.0])
        assert env.ell[0] == pytest.approx(math.exp(-1.0))
        assert env.u[0] == pytest.approx(math.e)

    def test_envelopes_hold_for_random_pairs(self, ising_2x2):
        rng = np.random.default_rng(7)
        grid = build_grid(-1.0, 2.0, 31)
        env = envelopes_for(ising_2x2, grid)
        nodes = rng.integers(0, grid.n, size=10_000)
        states = rng.integers(0, ising_2x2.n_states, size=10_000)
        weights = np.exp(-grid.nodes[nodes] * ising_2x2.energies[states])
        assert np.all(weights >= env.ell[nodes] * (1 - 1e-12))
        assert np.all(weights <= env.u[nodes] * (1 + 1e-12))

    def test_state_budget_constant(self):
        assert gibbs_models.MAX_STATES == 2 ** 20
