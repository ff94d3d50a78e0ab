"""Property suites behind ``controlg verify``.

Each suite checks one guarantee of the scheduler against an independent
oracle or a randomized property, with a fixed seed, and returns a
:class:`SuiteResult`.  Problem sizes default to the release gate; smaller
sizes can be passed for quick checks.
"""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import controller as ctl
from .config import GraphConfig, ScheduleConfig, SimConfig, TestbedConfig
from .graph_spectral import (
    Graph,
    eig_sym,
    lowpass_filter_apply,
    normalized_laplacian,
    normalized_laplacian_quadform,
    rayleigh_quotient,
)
from .hv_planner import PlannerConfig, PlannerState, hv_sensitivities, log_hypervolume, plan_allocation
from .mgda import GradientSet, normalize_gradients, solve_min_norm
from .sim_engine import block_update, build_testbed, run_simulation
from .trace_io import read_trace, report


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "seconds": round(self.seconds, 3), "details": self.details}


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0xC0C0, tag]))


def random_graph(rng: np.random.Generator, n: int) -> Graph:
    """Weighted graph on ``n`` nodes: a random spanning path plus random extra edges."""
    A = np.zeros((n, n))
    if n == 1:
        raise ValueError("need n >= 2")
    order = rng.permutation(n)
    w_path = rng.uniform(0.1, 2.0, n - 1)
    A[order[:-1], order[1:]] = w_path
    p = rng.uniform(0.0, 0.5)
    extra = np.triu(rng.random((n, n)) < p, k=1) * rng.uniform(0.1, 2.0, (n, n))
    A = np.triu(A + A.T, k=1) + extra
    return Graph.from_adjacency(A + A.T)


def random_signal(rng: np.random.Generator, n: int) -> np.ndarray:
    h = int(rng.integers(1, 6))
    return rng.standard_normal((n, h)) * rng.uniform(0.1, 10.0)


# --- controller suites -----------------------------------------------------


def suite_deficit_sum(blocks: int = 100_000, K: int = 5, sense_period: int = 10) -> SuiteResult:
    rng = _rng(1)
    worst = 0.0
    for policy in ctl.Policy:
        cfg = ctl.ControllerConfig()
        cs = ctl.ControllerState(K)
        prng = _rng(100 + list(ctl.Policy).index(policy))
        f = np.full(K, 1.0 / K)
        for m in range(blocks):
            if m % sense_period == 0:
                f = rng.dirichlet(np.ones(K))
            step = ctl.select(policy, cs, cfg, f, prng)
            worst = max(worst, abs(float(step["e"].sum()) - 1.0))
            ctl.record_execution(cs, step["task"], step["e"])
    return SuiteResult("deficit_sum", worst <= 1e-9, {"max_abs_sum_error": worst, "blocks_per_policy": blocks})


def suite_bounded_tracking(trials: int = 100, blocks: int = 10_000) -> SuiteResult:
    rng = _rng(2)
    violations = 0
    lo, hi = 0.0, 0.0
    failing_K: dict[int, int] = {}
    for _ in range(trials):
        K = int(rng.integers(2, 9))
        f = rng.dirichlet(np.ones(K))
        cs = ctl.ControllerState(K)
        bad = False
        for m in range(1, blocks + 1):
            e = ctl.compute_deficits(cs, f)
            ctl.record_execution(cs, ctl.max_deficit_select(e), e)
            d = cs.N - m * f
            lo, hi = min(lo, float(d.min())), max(hi, float(d.max()))
            if not np.all(np.abs(d) < 1.0):
                violations += 1
                bad = True
        if bad:
            failing_K[K] = failing_K.get(K, 0) + 1
    return SuiteResult("bounded_tracking", violations == 0, {
        "violations": violations, "min_discrepancy": lo, "max_discrepancy": hi,
        "failing_trials_by_K": {str(k): v for k, v in sorted(failing_K.items())},
        "trials": trials, "blocks": blocks,
    })


def suite_exploration(trials: int = 100_000, eps: float = 0.1, K: int = 5, s_max: int = 50) -> SuiteResult:
    rng = _rng(9)
    cfg = ctl.ControllerConfig(eps_explore=eps)
    floor = eps / K
    # analytic floor on random and extreme logits
    floor_ok = True
    for _ in range(2000):
        nu = rng.standard_normal(K) * 10.0 ** rng.uniform(-3, 3)
        p = ctl.selection_probabilities(nu, cfg)
        floor_ok &= bool(np.all(p >= floor)) and abs(p.sum() - 1.0) <= 1e-12
    # renewal trials: wait = blocks until the suppressed task is next chosen
    nu = np.zeros(K)
    nu[0] = -100.0
    p = ctl.selection_probabilities(nu, cfg)
    waits: list[np.ndarray] = []
    total = 0
    last = -1
    draws = 0
    freq_counts = np.zeros(K, dtype=np.int64)
    while total < trials:
        u = rng.random(1_000_000)
        picks = ctl.inverse_cdf(p, u)
        freq_counts += np.bincount(picks, minlength=K)
        hits = np.flatnonzero(picks == 0) + draws
        starts = np.concatenate(([last + 1], hits[:-1] + 1))
        waits.append(hits - starts)
        total += hits.size
        if hits.size:
            last = int(hits[-1])
        draws += u.size
    X = np.concatenate(waits)[:trials]
    tail_ok = True
    worst_ratio = 0.0
    for s in range(1, s_max + 1):
        emp = float(np.mean(X > s))
        bound = (1.0 - floor) ** s
        worst_ratio = max(worst_ratio, emp / bound)
        tail_ok &= emp <= 1.05 * bound
    mean_wait = float(X.mean())
    freq = freq_counts / freq_counts.sum()
    std = math.sqrt(floor * (1 - floor) / freq_counts.sum())
    freq_ok = bool(np.all(freq >= floor - 3 * std))
    passed = floor_ok and tail_ok and mean_wait <= K / eps and freq_ok
    return SuiteResult("exploration", passed, {
        "floor_exact": floor_ok, "tail_ok": tail_ok, "worst_tail_ratio": worst_ratio,
        "mean_wait": mean_wait, "mean_wait_bound": K / eps, "min_frequency": float(freq.min()),
        "trials": int(X.size),
    })


def suite_antiwindup(blocks: int = 100_000, K: int = 4) -> SuiteResult:
    rng = _rng(10)
    policies = list(ctl.Policy)
    worst = 0.0
    violations = 0
    cfg = ctl.ControllerConfig(k_p=1.0, k_i=0.5, k_d=0.2, i_max=2.5)
    cs = ctl.ControllerState(K)
    policy = policies[0]
    f = np.full(K, 1.0 / K)
    for m in range(blocks):
        if m % 500 == 0:
            # adversarial segments: skewed plans under policies that ignore the deficit
            policy = policies[int(rng.integers(len(policies)))]
            f = rng.dirichlet(np.full(K, 0.2))
        if m % 2000 == 0:
            cs.reset()
        step = ctl.select(policy, cs, cfg, f, rng)
        peak = float(np.max(np.abs(cs.I)))
        worst = max(worst, peak)
        if peak > cfg.i_max:
            violations += 1
        ctl.record_execution(cs, step["task"], step["e"])
    return SuiteResult("antiwindup", violations == 0,
                       {"violations": violations, "max_abs_integral": worst, "i_max": cfg.i_max, "blocks": blocks})


def _tracking_error(policy, f, cfg, rng, M) -> float:
    cs = ctl.ControllerState(f.size)
    worst = 0.0
    for _ in range(M):
        step = ctl.select(policy, cs, cfg, f, rng)
        ctl.record_execution(cs, step["task"], step["e"])
        worst = max(worst, float(np.max(np.abs(cs.discrepancy()))))
    return worst


def suite_controller_vs_iid(seeds: int = 50, M: int = 500, K: int = 5) -> SuiteResult:
    cfg = ctl.ControllerConfig(k_p=1.0, k_i=0.1, k_d=0.0, eps_explore=0.05)
    pid, iid = [], []
    for seed in range(seeds):
        f = _rng(1000 + seed).dirichlet(np.ones(K))
        pid.append(_tracking_error(ctl.Policy.CONTROLG, f, cfg, np.random.default_rng(seed), M))
        iid.append(_tracking_error(ctl.Policy.IID_FROM_PLAN, f, cfg, np.random.default_rng(seed), M))
    med_pid, med_iid = float(np.median(pid)), float(np.median(iid))
    return SuiteResult("controller_vs_iid", med_pid < med_iid,
                       {"median_pid": med_pid, "median_iid": med_iid, "seeds": seeds, "M": M})


# --- solver and spectral suites -----------------------------------------------


def suite_mgda(trials: int = 1000, pairs: int = 200, grid_trials: int = 20, grid_res: int = 400) -> SuiteResult:
    rng = _rng(3)
    worst_vi = 0.0
    for _ in range(trials):
        K = int(rng.integers(1, 9))
        d = int(rng.integers(1, 65))
        G = normalize_gradients(GradientSet.from_rows(rng.standard_normal((K, d)) * rng.uniform(0.01, 100, (K, 1))))
        sol = solve_min_norm(G)
        g = sol.lam @ G.rows
        viol = float(np.max(sol.g_mix_norm_sq - G.rows @ g))
        worst_vi = max(worst_vi, viol)
    worst_closed = 0.0
    for _ in range(pairs):
        d = int(rng.integers(1, 65))
        G = normalize_gradients(GradientSet.from_rows(rng.standard_normal((2, d))))
        g1, g2 = G.rows
        sol = solve_min_norm(G)
        gap = (g1 - g2) @ (g1 - g2)
        if gap < 1e-24:
            # identical gradients: every weighting is optimal, only the norm is pinned
            worst_closed = max(worst_closed, abs(sol.g_mix_norm_sq - g1 @ g1))
            continue
        closed = float(np.clip((g2 - g1) @ g2 / gap, 0.0, 1.0))
        worst_closed = max(worst_closed, abs(sol.lam[0] - closed))
    # exhaustive grid on the 2-simplex
    i, j = np.meshgrid(np.arange(grid_res + 1), np.arange(grid_res + 1), indexing="ij")
    keep = i + j <= grid_res
    grid = np.stack([i[keep], j[keep], grid_res - i[keep] - j[keep]], axis=1) / grid_res
    worst_gap = 0.0
    below_grid = True
    for _ in range(grid_trials):
        G = normalize_gradients(GradientSet.from_rows(rng.standard_normal((3, 8))))
        Q = G.rows @ G.rows.T
        q_grid = float(np.min(np.einsum("ij,jk,ik->i", grid, Q, grid)))
        q_sol = solve_min_norm(G).g_mix_norm_sq
        worst_gap = max(worst_gap, abs(q_sol - q_grid))
        below_grid &= q_sol <= q_grid + 1e-12
    passed = worst_vi <= 1e-6 and worst_closed <= 1e-8 and worst_gap <= 1e-4 and below_grid
    return SuiteResult("mgda", passed, {
        "max_vi_violation": worst_vi, "max_k2_closed_form_error": worst_closed,
        "max_k3_grid_gap": worst_gap, "solver_never_worse_than_grid": below_grid,
    })


def suite_rq_spectral(trials: int = 200, n_max: int = 100) -> SuiteResult:
    rng = _rng(4)
    worst_rel = 0.0
    in_range = True
    for _ in range(trials):
        n = int(rng.integers(2, n_max + 1))
        g = random_graph(rng, n)
        lam, U = eig_sym(normalized_laplacian(g))
        in_range &= bool(lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9)
        H = random_signal(rng, n)
        w = np.sum((U.T @ H) ** 2, axis=1)
        oracle = float(lam @ w / w.sum())
        rq = rayleigh_quotient(g, H)
        in_range &= 0.0 <= rq <= 2.0
        worst_rel = max(worst_rel, abs(rq - oracle) / max(abs(oracle), 1e-300))
    return SuiteResult("rq_spectral", worst_rel <= 1e-8 and in_range,
                       {"max_rel_error": worst_rel, "all_in_range": in_range, "trials": trials})


def suite_dirichlet(trials: int = 200, n_max: int = 100) -> SuiteResult:
    rng = _rng(5)
    worst_rel = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, n_max + 1))
        g = random_graph(rng, n)
        H = random_signal(rng, n)
        dense = float(np.trace(H.T @ normalized_laplacian(g) @ H))
        edge = normalized_laplacian_quadform(g, H)
        worst_rel = max(worst_rel, abs(edge - dense) / max(abs(dense), 1e-300))
    return SuiteResult("dirichlet", worst_rel <= 1e-10, {"max_rel_error": worst_rel, "trials": trials})


def _random_response(rng: np.random.Generator) -> Callable[[np.ndarray], np.ndarray]:
    kind = int(rng.integers(3))
    if kind == 0:
        a = rng.uniform(0.1, 5.0)
        return lambda x: np.exp(-a * x)
    if kind == 1:
        c = rng.uniform(0.05, 2.0)
        return lambda x: (x <= c).astype(np.float64)
    knots = np.linspace(0.0, 2.0, int(rng.integers(2, 9)))
    vals = np.sort(rng.uniform(0.0, 1.0, knots.size))[::-1]
    return lambda x: np.interp(x, knots, vals)


def suite_lowpass_bound(trials: int = 500, cutoffs=(0.25, 0.5, 1.0, 1.5), n_max: int = 60) -> SuiteResult:
    rng = _rng(6)
    violations = 0
    checked = 0
    skipped = 0
    worst_margin = -math.inf
    for _ in range(trials):
        n = int(rng.integers(2, n_max + 1))
        g = random_graph(rng, n)
        eig = eig_sym(normalized_laplacian(g))
        lam_max = float(eig[0][-1])
        H = random_signal(rng, n)
        if rng.random() < 0.5:
            # bias the signal toward one end of the spectrum
            U = eig[1]
            H = U @ (np.exp(rng.uniform(-4, 4) * eig[0])[:, None] * (U.T @ H))
        resp = _random_response(rng)
        energy = float(np.sum(H * H))
        progress = float(np.sum(H * lowpass_filter_apply(g, H, resp, eig))) / energy
        r = normalized_laplacian_quadform(g, H) / energy
        p0 = float(resp(np.array([0.0]))[0])
        for lc in cutoffs:
            if not lc < lam_max:
                skipped += 1
                continue
            pc = float(resp(np.array([lc]))[0])
            bound = p0 - (p0 - pc) * max(0.0, (r - lc) / (lam_max - lc))
            checked += 1
            worst_margin = max(worst_margin, progress - bound)
            if progress > bound + 1e-8:
                violations += 1
    return SuiteResult("lowpass_bound", violations == 0 and checked > 0, {
        "violations": violations, "checked": checked, "skipped_cutoff_above_lambda_max": skipped,
        "max_progress_minus_bound": worst_margin,
    })


# --- planner suites ---------------------------------------------------------


def suite_hv_pareto(pairs: int = 10_000, fd_trials: int = 1000, h: float = 1e-6) -> SuiteResult:
    rng = _rng(7)
    K = 4
    ps = PlannerState(r=rng.uniform(1.0, 3.0, K), f=np.full(K, 1.0 / K))
    failures = 0
    for _ in range(pairs):
        b = ps.r - rng.uniform(0.05, 2.0, K)
        step = rng.uniform(1e-6, 1.0, K) * (rng.random(K) < 0.5)
        if not step.any():
            step[rng.integers(K)] = rng.uniform(1e-6, 1.0)
        a = b - step
        if not log_hypervolume(ps, a) > log_hypervolume(ps, b):
            failures += 1
    worst_fd = 0.0
    for _ in range(fd_trials):
        L = ps.r - rng.uniform(0.1, 2.0, K)
        w = hv_sensitivities(ps, L)
        phi = log_hypervolume(ps, L)
        for k in range(K):
            Lh = L.copy()
            Lh[k] += h
            fd = (log_hypervolume(ps, Lh) - phi) / h
            worst_fd = max(worst_fd, abs(fd + w[k]))
    return SuiteResult("hv_pareto", failures == 0 and worst_fd <= 1e-4,
                       {"pareto_failures": failures, "pairs": pairs, "max_fd_error": worst_fd, "h": h})


def suite_alloc_pf(trials: int = 100, competitors: int = 1000) -> SuiteResult:
    rng = _rng(8)
    wins = 0
    for _ in range(trials):
        K = int(rng.integers(2, 9))
        cfg = PlannerConfig(gamma=float(rng.uniform(0.0, 2.0)))
        w = rng.uniform(0.1, 20.0, K)
        D = rng.uniform(0.0, 1.0, K)
        ps = plan_allocation(PlannerState(r=np.ones(K), f=np.full(K, 1.0 / K), cfg=cfg), w, D)
        a = w / (1.0 + cfg.gamma * D)
        best = float(a @ np.log(ps.f))
        others = rng.dirichlet(np.ones(K), competitors)
        wins += bool(np.all(best > np.log(others) @ a))
    return SuiteResult("alloc_pf", wins == trials, {"wins": wins, "trials": trials})


# --- end-to-end suites --------------------------------------------------------


def spectral_pair_config(blocks: int = 2000, seed: int = 0) -> SimConfig:
    return SimConfig(
        graph=GraphConfig(topology="ring", n=64),
        testbed=TestbedConfig(K=2, h=4, profiles=("lowpass:0.7", "highpass:1.3"), target_jitter=0.0),
        schedule=ScheduleConfig(T=1, M=blocks, block_size=1, sense_period=10, eta=0.5, policy="controlg"),
    ).with_overrides(seed=seed)


def suite_sensing_separation(blocks: int = 2000) -> SuiteResult:
    cfg = spectral_pair_config(blocks)
    buf = io.StringIO()
    summary = run_simulation(cfg, buf)
    buf.seek(0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "pair.jsonl"
        path.write_text(buf.getvalue())
        tr = read_trace(path)
    checked = 0
    mismatches = 0
    prev_losses = None
    for b in tr.blocks:
        if "RQ" not in b:
            prev_losses = b["losses"]
            continue
        # RQ is sensed before the block runs, so judge convergence on the losses it saw
        seen = prev_losses if prev_losses is not None else [math.inf, math.inf]
        prev_losses = b["losses"]
        if max(seen) < 1e-10:
            break
        checked += 1
        if not b["RQ"][0] < b["RQ"][1]:
            mismatches += 1
    passed = checked > 0 and mismatches == 0 and not summary.diverged
    return SuiteResult("sensing_separation", passed,
                       {"sensing_steps_checked": checked, "mismatches": mismatches, "blocks": summary.blocks})


def suite_interference(blocks: int = 1000, eta: float = 1e-4, rel_tol: float = 0.05, abs_tol: float = 1e-12) -> SuiteResult:
    cfg = SimConfig(
        graph=GraphConfig(topology="ring", n=48),
        testbed=TestbedConfig(K=3, h=4, profiles=("flat", "lowpass:1.0", "highpass:0.8"), noise_sigma=0.0),
    )
    rng = _rng(13)
    _, suite, Z = build_testbed(cfg, rng)
    K = len(suite)
    failures = 0
    checked = 0
    worst = 0.0
    for _ in range(blocks):
        k = int(rng.integers(K))
        grads = suite.grads(Z)
        before = suite.losses(Z)
        Z_new, _ = block_update(suite, Z, k, 1, eta, rng)
        after = suite.losses(Z_new)
        for j in range(K):
            predicted = -eta * float(np.sum(grads[j] * grads[k]))
            measured = float(after[j] - before[j])
            err = abs(measured - predicted)
            checked += 1
            if err > abs_tol:
                rel = err / abs(predicted) if predicted != 0 else math.inf
                worst = max(worst, rel)
                if rel > rel_tol:
                    failures += 1
        Z = Z_new
    return SuiteResult("interference", failures == 0,
                       {"failures": failures, "pairs_checked": checked, "max_rel_error": worst, "eta": eta})


def determinism_config() -> SimConfig:
    return SimConfig(
        graph=GraphConfig(topology="erdos_renyi", n=40, p=0.15),
        testbed=TestbedConfig(K=3, h=4, profiles=("flat", "lowpass:0.8", "highpass:1.2"), noise_sigma=0.05),
        schedule=ScheduleConfig(T=2, M=60, block_size=2, sense_period=7, eta=0.2),
    ).with_overrides(seed=7)


def suite_determinism() -> SuiteResult:
    from .cli import main as cli_main
    from .config import dump_config

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg_path = tmp / "run.ini"
        cfg_path.write_text(dump_config(determinism_config()))
        outs = []
        for tag in ("a", "b"):
            (tmp / tag).mkdir()
            out = tmp / tag / "trace.jsonl"
            # keep the run's status line out of the verify result document
            with contextlib.redirect_stdout(io.StringIO()):
                code = cli_main(["simulate", "--config", str(cfg_path), "--seed", "7", "--out", str(out)])
            if code != 0:
                return SuiteResult("determinism", False, {"simulate_exit_code": code})
            outs.append(out)
        a, b = (p.read_bytes() for p in outs)
        ra, rb = report([outs[0]]), report([outs[1]])
        same_trace = a == b
        same_report = ra == rb
        return SuiteResult("determinism", same_trace and same_report and len(a) > 0,
                           {"identical_traces": same_trace, "identical_reports": same_report, "trace_bytes": len(a)})


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "deficit_sum": suite_deficit_sum,
    "bounded_tracking": suite_bounded_tracking,
    "mgda": suite_mgda,
    "rq_spectral": suite_rq_spectral,
    "dirichlet": suite_dirichlet,
    "lowpass_bound": suite_lowpass_bound,
    "hv_pareto": suite_hv_pareto,
    "alloc_pf": suite_alloc_pf,
    "exploration": suite_exploration,
    "antiwindup": suite_antiwindup,
    "controller_vs_iid": suite_controller_vs_iid,
    "sensing_separation": suite_sensing_separation,
    "interference": suite_interference,
    "determinism": suite_determinism,
}


def resolve(selector: str) -> list[str]:
    """``"all"``, one suite name, or a comma-separated list of names."""
    if selector == "all":
        return list(SUITES)
    names = [s.strip() for s in selector.split(",") if s.strip()]
    unknown = [s for s in names if s not in SUITES]
    if unknown or not names:
        raise KeyError(f"unknown suite(s) {unknown or [selector]}; choose from {list(SUITES)} or 'all'")
    return names


def run_suite(name: str, **kwargs) -> SuiteResult:
    started = time.perf_counter()
    result = SUITES[name](**kwargs)
    return replace(result, seconds=time.perf_counter() - started)


def run_suites(selector: str = "all") -> list[SuiteResult]:
    return [run_suite(name) for name in resolve(selector)]
