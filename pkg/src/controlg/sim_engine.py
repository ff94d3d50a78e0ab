"""Synthetic multi-objective testbed and the sense -> plan -> control loop.

Each synthetic objective is a spectrally shaped quadratic on node embeddings,
``L_k(Z) = 0.5 * ||P_k (Z - Z*_k)||_F^2`` with ``P_k = U diag(c_k) U^T`` a
filter in the normalized-Laplacian eigenbasis.  The embeddings are the
parameters, so the parameter gradient is just the flattened
representation-gradient field ``H_k = P_k^2 (Z - Z*_k)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np

from . import controller as ctl
from .config import SimConfig, parse_profile
from .errors import ConfigError, DivergenceError
from .graph_spectral import (
    EIG_SIZE_CAP,
    Graph,
    eig_sym,
    erdos_renyi_graph,
    grid_graph,
    normalized_laplacian,
    rayleigh_quotient,
    read_graph,
    ring_graph,
)
from .hv_planner import (
    PlannerState,
    hv_sensitivities,
    log_hypervolume,
    plan_allocation,
    update_reference,
)
from .mgda import GradientSet, conflict_scores, normalize_gradients, solve_min_norm
from .state_estimator import update_difficulty, update_normalized_loss, warmup_scales
from .trace_io import write_trace

DIVERGENCE_FACTOR = 1e6


def spectral_response(profile: str, lam: np.ndarray) -> np.ndarray:
    """Filter coefficients c(lambda) >= 0 for a profile string like ``"lowpass:0.7"``."""
    kind, args = parse_profile(profile)
    lam = np.asarray(lam, dtype=np.float64)
    if kind == "flat":
        return np.ones_like(lam)
    if kind == "lowpass":
        (cut,) = args
        return np.where(lam < cut, 1.0 - lam / cut, 0.0) if cut > 0 else np.zeros_like(lam)
    if kind == "highpass":
        (cut,) = args
        return np.where(lam > cut, (lam - cut) / (2.0 - cut), 0.0) if cut < 2 else np.zeros_like(lam)
    lo, hi = args
    return ((lam >= lo) & (lam <= hi)).astype(np.float64)


@dataclass
class SyntheticObjective:
    target: np.ndarray
    filter_coeffs: np.ndarray
    noise_sigma: float
    P: np.ndarray = field(repr=False)
    P2: np.ndarray = field(repr=False)

    def residual(self, Z: np.ndarray) -> np.ndarray:
        return self.P @ (Z - self.target)

    def loss(self, Z: np.ndarray) -> float:
        R = self.residual(Z)
        return 0.5 * float(np.sum(R * R))

    def grad(self, Z: np.ndarray) -> np.ndarray:
        return self.P2 @ (Z - self.target)

    def noisy_grad(self, Z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Gradient plus N(0, sigma^2) noise; draws nothing when sigma is 0."""
        g = self.grad(Z)
        if self.noise_sigma > 0:
            g = g + self.noise_sigma * rng.standard_normal(g.shape)
        return g


@dataclass
class ObjectiveSuite:
    objectives: list[SyntheticObjective]
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def __len__(self) -> int:
        return len(self.objectives)

    def __iter__(self) -> Iterator[SyntheticObjective]:
        return iter(self.objectives)

    def __getitem__(self, k: int) -> SyntheticObjective:
        return self.objectives[k]

    def losses(self, Z: np.ndarray) -> np.ndarray:
        return np.array([obj.loss(Z) for obj in self.objectives])

    def grads(self, Z: np.ndarray) -> list[np.ndarray]:
        return [obj.grad(Z) for obj in self.objectives]


@dataclass(frozen=True)
class SenseReading:
    losses: np.ndarray
    rq: np.ndarray
    lambda_star: np.ndarray
    conf: np.ndarray
    g_mix_norm_sq: float
    zero_grad: np.ndarray


@dataclass
class RunSummary:
    policy: str
    seed: int
    final_losses: np.ndarray
    final_phi: float
    counts: np.ndarray
    max_abs_discrepancy: float
    diverged: bool
    blocks: int
    wall_time: float
    phi_trajectory: list[float] = field(default_factory=list)
    error: str = ""


def build_graph(cfg: SimConfig, rng: np.random.Generator) -> Graph:
    gc = cfg.graph
    if gc.topology == "ring":
        return ring_graph(gc.n)
    if gc.topology == "grid":
        cols = gc.grid_cols or int(round(math.sqrt(gc.n)))
        if cols < 1 or gc.n % cols:
            raise ConfigError(f"grid: n={gc.n} is not divisible by grid_cols={cols}", "graph.grid_cols")
        return grid_graph(gc.n // cols, cols)
    if gc.topology == "erdos_renyi":
        return erdos_renyi_graph(gc.n, gc.p, rng)
    return read_graph(gc.path)


def _unit_frob(M: np.ndarray) -> np.ndarray:
    return M * (math.sqrt(M.size) / np.linalg.norm(M))


def build_testbed(cfg: SimConfig, rng: np.random.Generator):
    """Construct the graph, the K objectives and the initial embeddings.

    Targets live in a shared plane: ``Z*_k = s (cos a_k B + sin a_k C + j E_k)``
    with ``B, C`` orthogonal and ``E_k`` an independent jitter, so the target
    angles control how much the tasks pull against each other.
    """
    g = build_graph(cfg, rng)
    if g.n > EIG_SIZE_CAP:
        raise ConfigError(f"testbed is limited to n <= {EIG_SIZE_CAP} nodes, got {g.n}", "graph.n")
    lam, U = eig_sym(normalized_laplacian(g))
    tb = cfg.testbed
    n, h = g.n, tb.h
    B = rng.standard_normal((n, h))
    C = rng.standard_normal((n, h))
    C -= (np.sum(B * C) / np.sum(B * B)) * B
    B, C = _unit_frob(B), _unit_frob(C)
    objectives = []
    for k, (profile, angle) in enumerate(zip(tb.task_profiles(), tb.task_angles())):
        coeffs = spectral_response(profile, lam)
        if not np.any(coeffs > 0):
            raise ConfigError(f"profile {profile!r} of task {k} selects no Laplacian eigenvalue", "testbed.profiles")
        a = math.radians(angle)
        jitter = _unit_frob(rng.standard_normal((n, h)))
        target = tb.target_scale * (math.cos(a) * B + math.sin(a) * C + tb.target_jitter * jitter)
        P = (U * coeffs) @ U.T
        P2 = (U * coeffs**2) @ U.T
        objectives.append(SyntheticObjective(target, coeffs, tb.noise_sigma, 0.5 * (P + P.T), 0.5 * (P2 + P2.T)))
    Z0 = tb.init_scale * rng.standard_normal((n, h))
    return g, ObjectiveSuite(objectives, lam, U), Z0


def sense(
    g: Graph,
    suite: ObjectiveSuite,
    Z: np.ndarray,
    eps_stab: float = 1e-12,
    mgda_tol: float = 1e-8,
    mgda_max_iter: int = 10_000,
) -> SenseReading:
    """Noise-free full-graph losses, spectral demand, MGDA weights and interference."""
    losses = suite.losses(Z)
    H = suite.grads(Z)
    rq = np.array([rayleigh_quotient(g, Hk, eps_stab) for Hk in H])
    raw = GradientSet.from_rows(np.stack([Hk.ravel() for Hk in H]))
    sol = solve_min_norm(normalize_gradients(raw), tol=mgda_tol, max_iter=mgda_max_iter)
    conf = conflict_scores(raw, sol.lam)
    return SenseReading(losses, rq, sol.lam, conf, sol.g_mix_norm_sq, raw.zero)


def block_update(
    suite: ObjectiveSuite,
    Z: np.ndarray,
    k: int,
    block_size: int,
    eta: float,
    rng: np.random.Generator,
    norm_limit: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """``block_size`` plain noisy gradient steps on task ``k`` only.

    Returns the new embeddings and the loss observed before each step.
    Raises :class:`DivergenceError` on non-finite values or when
    ``||Z||_F`` exceeds ``norm_limit``.
    """
    obj = suite[k]
    observed = np.empty(block_size)
    for j in range(block_size):
        observed[j] = obj.loss(Z)
        Z = Z - eta * obj.noisy_grad(Z, rng)
        if not np.all(np.isfinite(Z)):
            raise DivergenceError(f"non-finite embeddings after step {j + 1} on task {k}")
        if norm_limit is not None and np.linalg.norm(Z) > norm_limit:
            raise DivergenceError(f"||Z||_F exceeded {norm_limit:.3e} on task {k}")
    return Z, observed


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("testbed", "warmup", "policy", "noise")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def run_simulation(cfg: SimConfig, out: IO[str] | None = None) -> RunSummary:
    """Warm-up, then T epochs of M blocks of sense/plan (every u blocks) and control.

    When ``out`` is given, a header line, one line per block and a summary
    line are written to it as canonical JSON.  Randomness comes from four
    independent streams spawned from the seed: testbed construction,
    warm-up noise, policy draws (one uniform per block) and block-update
    noise.
    """
    started = time.perf_counter()
    sc, run = cfg.schedule, cfg.run
    policy = cfg.policy
    rngs = _streams(run.seed)
    g, suite, Z = build_testbed(cfg, rngs["testbed"])
    K = len(suite)
    norm_limit = DIVERGENCE_FACTOR * max(float(np.linalg.norm(Z)), 1e-300)

    obj_state = warmup_scales(suite, sc.warmup_steps, sc.warmup_eta, rngs["warmup"], Z, cfg.difficulty)
    planner = PlannerState.start(obj_state.warmup_peak, cfg.planner)
    cs = ctl.ControllerState(K)

    if out is not None:
        write_trace(out, {"kind": "header", "config": cfg.to_dict(), "K": K, "n": g.n,
                          "policy": policy.value, "seed": run.seed, "L_scale": obj_state.L_scale})

    counts = np.zeros(K, dtype=np.int64)
    phis: list[float] = []
    max_disc = 0.0
    blocks = 0
    losses = suite.losses(Z)
    error = ""
    try:
        for t in range(1, sc.T + 1):
            cs.reset()
            for m in range(1, sc.M + 1):
                record: dict = {"kind": "block", "epoch": t, "block": m, "seed": run.seed}
                if m == 1 or (m - 1) % sc.sense_period == 0:
                    reading = sense(g, suite, Z, run.eps_stab, run.mgda_tol, run.mgda_max_iter)
                    obj_state = update_difficulty(obj_state, cfg.difficulty, reading.rq, reading.conf)
                    obj_state = update_normalized_loss(obj_state, cfg.difficulty, reading.losses)
                    planner = update_reference(planner, obj_state.L_tilde)
                    phi = log_hypervolume(planner, obj_state.L_tilde)
                    w = hv_sensitivities(planner, obj_state.L_tilde)
                    planner = plan_allocation(planner, w, obj_state.D)
                    phis.append(phi)
                    record.update(RQ=reading.rq, Conf=reading.conf, lambda_star=reading.lambda_star, phi=phi)
                step = ctl.select(policy, cs, cfg.controller, planner.f, rngs["policy"])
                k = step["task"]
                Z, _ = block_update(suite, Z, k, sc.block_size, sc.eta, rngs["noise"], norm_limit)
                ctl.record_execution(cs, k, step["e"])
                counts[k] += 1
                blocks += 1
                max_disc = max(max_disc, float(np.max(np.abs(cs.discrepancy()))))
                losses = suite.losses(Z)
                if out is not None:
                    record.update(chosen_task=k, f=planner.f, e=step["e"], I=cs.I, nu=step["nu"], p=step["p"],
                                  losses=losses, L_tilde=obj_state.L_tilde, D=obj_state.D, N=cs.N)
                    write_trace(out, record)
    except DivergenceError as exc:
        error = str(exc)
    summary = RunSummary(
        policy=policy.value,
        seed=run.seed,
        final_losses=losses,
        final_phi=phis[-1] if phis else float("nan"),
        counts=counts,
        max_abs_discrepancy=max_disc,
        diverged=bool(error),
        blocks=blocks,
        wall_time=time.perf_counter() - started,
        phi_trajectory=phis,
        error=error,
    )
    if out is not None:
        write_trace(out, summary_record(summary))
    return summary


def summary_record(s: RunSummary) -> dict:
    """Trace form of a summary; wall time is left out so traces stay byte-stable."""
    rec = {"kind": "summary", "policy": s.policy, "seed": s.seed, "final_losses": s.final_losses,
           "counts": s.counts, "max_abs_discrepancy": s.max_abs_discrepancy, "diverged": s.diverged,
           "blocks": s.blocks}
    if math.isfinite(s.final_phi):
        rec["final_phi"] = s.final_phi
    if s.error:
        rec["error"] = s.error
    return rec
