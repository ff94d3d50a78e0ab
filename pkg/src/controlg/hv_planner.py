"""Singleton log-hypervolume planning of per-task block fractions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class PlannerConfig:
    delta: float = 0.05
    gamma: float = 1.0
    eps: float = 1e-8
    f_min: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("delta must be positive", "delta")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative", "gamma")
        if not self.eps > 0:
            raise ConfigError("eps must be positive", "eps")
        if not 0 <= self.f_min < 1:
            raise ConfigError("f_min must lie in [0, 1)", "f_min")


@dataclass(frozen=True)
class PlannerState:
    """Reference point ``r`` (normalized-loss units) and the current plan ``f``."""

    r: np.ndarray
    f: np.ndarray
    cfg: PlannerConfig = PlannerConfig()

    @classmethod
    def start(cls, warmup_peak, cfg: PlannerConfig = PlannerConfig()) -> "PlannerState":
        """Seed r = (1 + delta) * peak warm-up normalized loss, with a uniform plan."""
        peak = np.asarray(warmup_peak, dtype=np.float64)
        K = peak.size
        return cls(r=(1.0 + cfg.delta) * peak, f=np.full(K, 1.0 / K), cfg=cfg)


def update_reference(ps: PlannerState, L_tilde) -> PlannerState:
    """Monotone safeguard r <- max(r, L_tilde + delta)."""
    L_tilde = np.asarray(L_tilde, dtype=np.float64)
    return replace(ps, r=np.maximum(ps.r, L_tilde + ps.cfg.delta))


def log_hypervolume(ps: PlannerState, L_tilde) -> float:
    """phi = sum_k log(r_k - L_tilde_k), the log volume of the dominated box."""
    slack = ps.r - np.asarray(L_tilde, dtype=np.float64)
    if np.any(slack <= 0):
        raise ContractViolation(f"reference point must strictly exceed the loss vector; slacks {slack}")
    return float(np.sum(np.log(slack)))


def hv_sensitivities(ps: PlannerState, L_tilde) -> np.ndarray:
    """w_k = 1 / (r_k - L_tilde_k + eps): stabilised -d(phi)/d(L_tilde_k)."""
    slack = ps.r - np.asarray(L_tilde, dtype=np.float64)
    if np.any(slack <= 0):
        raise ContractViolation(f"reference point must strictly exceed the loss vector; slacks {slack}")
    return 1.0 / (slack + ps.cfg.eps)


def plan_allocation(ps: PlannerState, w_hv, D) -> PlannerState:
    """f = a / sum(a) with a_k = w_k / (1 + gamma D_k).

    With ``f_min > 0`` the plan is floored at ``f_min`` and renormalised.
    """
    w_hv = np.asarray(w_hv, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if np.any(w_hv <= 0) or np.any(D < 0):
        raise ContractViolation("need positive sensitivities and nonnegative difficulties")
    a = w_hv / (1.0 + ps.cfg.gamma * D)
    f = a / a.sum()
    if ps.cfg.f_min > 0:
        f = np.maximum(f, ps.cfg.f_min)
        f = f / f.sum()
    return replace(ps, f=f)


def reference_allocation(f, m: int | None = None) -> np.ndarray:
    """Cumulative reference counts after ``m`` blocks.

    A single plan ``f`` (shape ``(K,)``) gives ``m * f``.  A per-block plan
    history (shape ``(m, K)``) gives the running sum of its rows, which is
    what the controller accumulates when the plan changes mid-epoch.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        if m is None or m < 0:
            raise ContractViolation("a single plan needs a block count m >= 0")
        return m * f
    if m is not None and m != f.shape[0]:
        raise ContractViolation(f"plan history has {f.shape[0]} rows but m={m}")
    return f.sum(axis=0)
