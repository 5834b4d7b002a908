"""
Shared fixtures: the two-node worked example, small Ising models, sample
configs written to tmp_path, and an isolated run ledger / budget file.
"""

import json

import pytest

from stability_lab import gibbs_models
from stability_lab.posterior_core import PosteriorSpec, counting_grid


@pytest.fixture
def two_node_grid():
    return counting_grid([0.0, 1.0])


@pytest.fixture
def two_node_specs(two_node_grid):
    """Counting measure on {0, 1}, Phi = 0, Z = (1, 1), Z_tilde = (1, 2)"""
    spec_z = PosteriorSpec(two_node_grid, [0.0, 0.0], [1.0, 1.0])
    return spec_z, spec_z.with_z([1.0, 2.0])


@pytest.fixture
def ising_2x2():
    return gibbs_models.build_ising(2, 2)


@pytest.fixture(autouse=True)
def isolated_side_files(tmp_path, monkeypatch):
    """Keep the run ledger and the budget file out of the working tree"""
    monkeypatch.setattr("monitoring.run_ledger.RUNS_CSV", tmp_path / "logs" / "runs.csv")
    monkeypatch.setenv("LAB_BUDGET_CONFIG", str(tmp_path / "budget_config.yaml"))
    monkeypatch.delenv("OTLP_ENDPOINT", raising=False)
    monkeypatch.delenv("OTLP_API_KEY", raising=False)


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def pair_config(tmp_path):
    def make(**overrides):
        data = {
            "scenario": "pair",
            "name": "two_node",
            "grid": {"nodes": [0.0, 1.0], "weights": "counting"},
            "phi": [0.0, 0.0],
            "z": [1.0, 1.0],
            "z_tilde": [1.0, 2.0],
            "holder": {"p": "inf", "K": 1.0, "ell": 1.0},
            "output_dir": str(tmp_path / "out"),
        }
        data.update(overrides)
        return _write(tmp_path, "pair.json", data)
    return make


@pytest.fixture
def simple_mc_config(tmp_path):
    def make(**overrides):
        data = {
            "scenario": "simple-mc",
            "name": "uniform_exp",
            "grid": {"lo": 0.0, "hi": 2.0, "n": 9},
            "phi": {"kind": "quadratic", "center": 1.0, "scale": 0.5},
            "sampler": {"kind": "uniform-exp"},
            "estimator": {"N": [4, 16, 64, 256], "M": 20, "seed": 11},
            "output_dir": str(tmp_path / "out"),
        }
        data.update(overrides)
        return _write(tmp_path, "simple_mc.json", data)
    return make


@pytest.fixture
def mis_config(tmp_path):
    def make(**overrides):
        data = {
            "scenario": "gibbs-mis",
            "name": "ising_mis",
            "grid": {"lo": 0.1, "hi": 2.0, "n": 9},
            "model": {"kind": "ising", "rows": 2, "cols": 2},
            "x_obs": "++++",
            "mis": {"anchors": [0.1, 1.05, 2.0], "weights": [0.25, 0.5, 0.25]},
            "estimator": {"N": [4, 16, 64, 256], "M": 20, "seed": 5},
            "output_dir": str(tmp_path / "out"),
        }
        data.update(overrides)
        return _write(tmp_path, "mis.json", data)
    return make
