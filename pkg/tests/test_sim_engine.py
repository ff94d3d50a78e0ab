import io
import json

import numpy as np
import pytest

from controlg.config import ControllerConfig, GraphConfig, ScheduleConfig, SimConfig, TestbedConfig
from controlg.errors import ConfigError, DivergenceError
from controlg.graph_spectral import rayleigh_quotient
from controlg.mgda import GradientSet
from controlg.sim_engine import (
    block_update,
    build_graph,
    build_testbed,
    run_simulation,
    sense,
    spectral_response,
)


def cfg_with(**sections):
    return SimConfig(**sections)


def test_spectral_responses():
    lam = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(spectral_response("flat", lam), 1.0)
    np.testing.assert_allclose(spectral_response("lowpass:1.0", lam), [1.0, 0.5, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(spectral_response("highpass:1.0", lam), [0.0, 0.0, 0.0, 0.5, 1.0])
    np.testing.assert_allclose(spectral_response("band:0.5:1.5", lam), [0, 1, 1, 1, 0])


def test_builders_and_caps(tmp_path):
    rng = np.random.default_rng(0)
    assert build_graph(cfg_with(graph=GraphConfig(topology="grid", n=12, grid_cols=4)), rng).m == 17
    with pytest.raises(ConfigError):
        build_graph(cfg_with(graph=GraphConfig(topology="grid", n=10, grid_cols=4)), rng)
    path = tmp_path / "g.txt"
    path.write_text("3 2\n0 1 1\n1 2 1\n")
    assert build_graph(cfg_with(graph=GraphConfig(topology="file", path=str(path))), rng).n == 3
    with pytest.raises(ConfigError, match="n <= 512"):
        build_testbed(cfg_with(graph=GraphConfig(n=600)), rng)
    with pytest.raises(ConfigError, match="selects no"):
        build_testbed(cfg_with(testbed=TestbedConfig(profiles=("lowpass:0",))), rng)


def test_objective_definitions():
    cfg = cfg_with(graph=GraphConfig(n=16), testbed=TestbedConfig(K=2, h=3, profiles=("lowpass:1.0", "flat")))
    _, suite, Z = build_testbed(cfg, np.random.default_rng(4))
    U, lam = suite.eigvecs, suite.eigvals
    for obj in suite:
        P = U @ np.diag(obj.filter_coeffs) @ U.T
        R = P @ (Z - obj.target)
        assert obj.loss(Z) == pytest.approx(0.5 * np.sum(R * R), rel=1e-12)
        np.testing.assert_allclose(obj.grad(Z), P @ P @ (Z - obj.target), atol=1e-12)
        assert obj.loss(obj.target) == 0.0
        # finite-difference check of the gradient along a random direction
        V = np.random.default_rng(1).standard_normal(Z.shape)
        h = 1e-6
        fd = (obj.loss(Z + h * V) - obj.loss(Z - h * V)) / (2 * h)
        assert fd == pytest.approx(np.sum(obj.grad(Z) * V), rel=1e-6)


def test_same_seed_same_suite():
    cfg = SimConfig()
    a = build_testbed(cfg, np.random.default_rng(3))
    b = build_testbed(cfg, np.random.default_rng(3))
    assert np.array_equal(a[2], b[2])
    assert all(np.array_equal(x.target, y.target) for x, y in zip(a[1], b[1]))


def test_spectral_pair_separates_at_init():
    cfg = cfg_with(testbed=TestbedConfig(K=2, h=4, profiles=("lowpass:0.3", "highpass:1.7")))
    g, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    r = sense(g, suite, Z)
    assert r.rq[0] < 0.3 < 1.7 < r.rq[1]


def test_opposing_targets_conflict():
    cfg = cfg_with(testbed=TestbedConfig(K=2, h=4, target_angles=(0.0, 180.0), target_jitter=0.0))
    g, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    r = sense(g, suite, Z)
    G = GradientSet.from_rows(np.stack([H.ravel() for H in suite.grads(Z)]))
    cos = G.rows[0] @ G.rows[1] / (G.norms[0] * G.norms[1])
    assert cos < 0 and np.all(r.conf > 0)


def test_sense_at_common_optimum():
    cfg = cfg_with(testbed=TestbedConfig(K=3, h=2, target_angles=(30.0, 30.0, 30.0), target_jitter=0.0))
    g, suite, _ = build_testbed(cfg, np.random.default_rng(0))
    r = sense(g, suite, suite[0].target)
    np.testing.assert_allclose(r.losses, 0.0, atol=1e-20)
    np.testing.assert_allclose(r.conf, 0.0)
    assert r.zero_grad.all()


def test_sense_single_task_and_oracle():
    cfg = cfg_with(testbed=TestbedConfig(K=1))
    g, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    r = sense(g, suite, Z)
    assert r.lambda_star.tolist() == [1.0] and r.conf.tolist() == [0.0]
    assert r.rq[0] == pytest.approx(rayleigh_quotient(g, suite[0].grad(Z)))


def test_block_update_basics():
    cfg = cfg_with(testbed=TestbedConfig(K=2, noise_sigma=0.0))
    _, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    Z1, obs = block_update(suite, Z, 0, 3, 0.0, np.random.default_rng(0))
    assert np.array_equal(Z1, Z) and obs.shape == (3,)
    # eta below 2 / max c^2 keeps the quadratic loss non-increasing
    eta = 1.9 / np.max(suite[1].filter_coeffs ** 2)
    Z2, obs = block_update(suite, Z, 1, 20, eta, np.random.default_rng(0))
    assert np.all(np.diff(obs) <= 1e-12) and suite[1].loss(Z2) <= obs[-1]


def test_block_update_noise_is_seeded():
    cfg = cfg_with(testbed=TestbedConfig(K=2, noise_sigma=0.3))
    _, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    a, _ = block_update(suite, Z, 0, 4, 0.1, np.random.default_rng(8))
    b, _ = block_update(suite, Z, 0, 4, 0.1, np.random.default_rng(8))
    c, _ = block_update(suite, Z, 0, 4, 0.1, np.random.default_rng(9))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_block_update_first_order_interference():
    cfg = cfg_with(testbed=TestbedConfig(K=3, noise_sigma=0.0))
    _, suite, Z = build_testbed(cfg, np.random.default_rng(2))
    eta = 1e-4
    g = suite.grads(Z)
    Z1, _ = block_update(suite, Z, 1, 1, eta, np.random.default_rng(0))
    for j in range(3):
        predicted = -eta * np.sum(g[j] * g[1])
        assert suite[j].loss(Z1) - suite[j].loss(Z) == pytest.approx(predicted, rel=0.05)


def test_block_update_divergence():
    cfg = cfg_with(testbed=TestbedConfig(K=1, noise_sigma=0.0))
    _, suite, Z = build_testbed(cfg, np.random.default_rng(0))
    with pytest.raises(DivergenceError):
        block_update(suite, Z, 0, 50, 10.0, np.random.default_rng(0), norm_limit=1e3)


def run_lines(cfg):
    buf = io.StringIO()
    summary = run_simulation(cfg, buf)
    return summary, [json.loads(line) for line in buf.getvalue().splitlines()]


def test_round_robin_counts():
    cfg = SimConfig(testbed=TestbedConfig(K=3), schedule=ScheduleConfig(T=1, M=9, policy="round_robin"))
    summary, lines = run_lines(cfg)
    assert summary.counts.tolist() == [3, 3, 3]
    assert [r["chosen_task"] for r in lines[1:-1]] == [0, 1, 2] * 3


def test_no_drought_with_exploration():
    cfg = SimConfig(
        graph=GraphConfig(n=16),
        testbed=TestbedConfig(K=5, h=2),
        schedule=ScheduleConfig(T=1, M=10_000, sense_period=500, eta=0.05),
        controller=ControllerConfig(eps_explore=0.1),
    )
    summary, _ = run_lines(cfg)
    assert summary.counts.min() >= 1 and summary.counts.sum() == 10_000


def test_trace_structure_and_conservation():
    cfg = SimConfig(schedule=ScheduleConfig(T=2, M=12, sense_period=5, block_size=2))
    summary, lines = run_lines(cfg)
    header, blocks, tail = lines[0], lines[1:-1], lines[-1]
    assert header["kind"] == "header" and tail["kind"] == "summary"
    assert header["config"] == cfg.to_dict()
    assert len(blocks) == 24 == summary.blocks
    sensing = [b["block"] for b in blocks if "RQ" in b]
    assert sensing == [1, 6, 11] * 2
    for b in blocks:
        assert sum(b["N"]) == b["block"]
        assert abs(sum(b["e"]) - 1) <= 1e-9
    assert np.bincount([b["chosen_task"] for b in blocks], minlength=3).tolist() == summary.counts.tolist()
    assert tail["counts"] == summary.counts.tolist()
    assert len(summary.phi_trajectory) == 6


def test_epoch_reset_and_persistence():
    cfg = SimConfig(schedule=ScheduleConfig(T=2, M=10, sense_period=3))
    _, lines = run_lines(cfg)
    blocks = lines[1:-1]
    first_of_second = blocks[10]
    assert first_of_second["epoch"] == 2 and first_of_second["block"] == 1
    # controller state restarts: deficit equals the plan, integral equals the deficit
    np.testing.assert_allclose(first_of_second["e"], first_of_second["f"], atol=1e-11)
    np.testing.assert_allclose(first_of_second["I"], first_of_second["e"], atol=1e-11)
    # difficulty persists (it is an EMA of the previous value, not reset to d_min)
    assert any(d > 0 for d in first_of_second["D"])


def test_divergence_recorded():
    cfg = SimConfig(testbed=TestbedConfig(K=2, noise_sigma=0.0, init_scale=1.0),
                    schedule=ScheduleConfig(T=1, M=200, eta=50.0))
    summary, lines = run_lines(cfg)
    assert summary.diverged and summary.error
    assert lines[-1]["diverged"] is True and "error" in lines[-1]
    assert summary.blocks == len(lines) - 2 < 200


def test_determinism_bytes():
    cfg = SimConfig(testbed=TestbedConfig(noise_sigma=0.2), schedule=ScheduleConfig(T=1, M=40))
    a, b = io.StringIO(), io.StringIO()
    run_simulation(cfg, a)
    run_simulation(cfg, b)
    assert a.getvalue() == b.getvalue()
    c = io.StringIO()
    run_simulation(cfg.with_overrides(seed=1), c)
    assert c.getvalue() != a.getvalue()


def test_streams_independent_of_policy():
    # testbed and warm-up draw from their own streams, so every policy sees
    # the same problem and the same first plan
    base = SimConfig(testbed=TestbedConfig(noise_sigma=0.1), schedule=ScheduleConfig(T=1, M=5))
    firsts = []
    for policy in ("controlg", "max_deficit", "random", "round_robin", "iid_from_plan"):
        _, lines = run_lines(base.with_overrides(policy=policy))
        firsts.append((lines[0]["L_scale"], lines[1]["f"], lines[1]["RQ"]))
    assert all(x == firsts[0] for x in firsts)
