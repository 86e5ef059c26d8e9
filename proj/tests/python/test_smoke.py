import json
import math

import numpy as np
import pytest

import rost

ONE_LEVEL = [(0.5, 0.5)]


def test_version():
    assert rost.__version__ == "0.1.0"


def test_poisson_dirichlet_weights():
    w = rost.sample_poisson_dirichlet(0.5, 64, seed=1)
    assert len(w) == 64
    assert math.isclose(sum(w), 1.0, abs_tol=1e-12)
    assert all(a >= b for a, b in zip(w, w[1:]))
    assert w == rost.sample_poisson_dirichlet(0.5, 64, seed=1)


def test_build_rpc_shape_and_overlaps():
    r = rost.build_rpc(ONE_LEVEL, 32, seed=7)
    assert len(r) == 32
    q = r.overlaps
    assert q.shape == (32, 32)
    assert np.allclose(q, q.T)
    assert np.allclose(np.diag(q), 1.0)
    off = q[~np.eye(32, dtype=bool)]
    assert np.allclose(off, 0.5)
    assert rost.ultrametric_violation([r], n_triples=200, tol=0.0, seed=3) == 0.0


def test_trajectory_and_velocity():
    r = rost.build_rpc(ONE_LEVEL, 16, seed=5)
    psi = rost.PsiSpec.linear(0.5)
    traj = rost.run_trajectory(r, psi, r=1, T=8, seed=9)
    assert traj.T == 8
    assert len(traj.cumulative_increments) == 16
    assert math.isfinite(traj.past_velocity(1))
    assert traj.velocity_dispersion(top_k=5) >= 0.0

    stepped, record = rost.evolve_step(r, psi, r=1, seed=11)
    assert len(stepped) == 16
    assert sorted(record["permutation"]) == list(range(16))
    assert math.isclose(sum(stepped.weights), 1.0, abs_tol=1e-12)


def test_identity_residual_vanishes_for_constant_observable():
    rosts = [rost.build_rpc(ONE_LEVEL, 16, seed=100 + i) for i in range(20)]
    res = rost.gg_residual(rosts, s=2, r=1, observable=rost.ObservableSpec.one(2),
                           draws_per_replica=16, seed=1)
    assert res["value"] == 0.0

    obs = rost.ObservableSpec.pair_power(2, 1, 2, 1)
    res = rost.gg_residual(rosts, s=2, r=1, observable=obs, draws_per_replica=16, seed=1)
    assert abs(res["value"]) <= max(4.0 * res["std_error"], 0.05)

    with pytest.raises(ValueError):
        rost.gg_residual(rosts, s=1, r=1, observable=rost.ObservableSpec.one(1),
                         draws_per_replica=4, seed=1)


def test_pressure_respects_field_bound():
    rosts = [rost.build_rpc(ONE_LEVEL, 32, seed=200 + i) for i in range(40)]
    psi = rost.PsiSpec.linear(1.0)
    est = rost.pressure(rosts, psi, r=1, lambda_=0.5, draws_per_replica=32, seed=2)
    bound = rost.log_field_mgf(psi, 0.5)
    assert 0.0 < est["value"] <= bound + 3.0 * est["std_error"] + 1e-9
    assert est["std_error"] > 0.0


def test_run_experiment_end_to_end(tmp_path):
    cfg = {
        "experiment": "qs-test",
        "seed": 11,
        "n_atoms": 32,
        "n_replicas": 60,
        "draws_per_replica": 16,
        "psi": {"kind": "linear", "lambda": 0.25},
        "output_path": str(tmp_path / "out"),
    }
    path = tmp_path / "qs.json"
    path.write_text(json.dumps(cfg))

    out = rost.run_experiment(str(path))
    assert out["pass"] is True
    assert (tmp_path / "out" / "qs-test.csv").exists()
    assert (tmp_path / "out" / "results.json").exists()
    assert (tmp_path / "out" / "manifest.json").exists()

    results = json.loads((tmp_path / "out" / "results.json").read_text())
    assert results["config_hash"] == rost.config_hash(str(path))
    assert len(results["rows"]) == 12

    again = rost.run_experiment(str(path), output_dir=str(tmp_path / "again"))
    assert again["csv"] == out["csv"]

    assert set(rost.known_experiments()) >= {"qs-test", "pressure", "velocity"}
