"""Deficit-tracking block scheduler.

Each block the controller accumulates the plan into a running reference,
measures the pre-decision deficit ``e = N_ref - N``, turns it into PID
logits and picks a task.  Every selection rule consumes exactly one
uniform draw from the policy generator per block, so traces stay aligned
across policies that share a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractViolation


class Policy(str, Enum):
    CONTROLG = "controlg"
    MAX_DEFICIT = "max_deficit"
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"
    IID_FROM_PLAN = "iid_from_plan"


def _as_gain(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be nonnegative", name)
    return float(arr) if arr.ndim == 0 else tuple(float(x) for x in arr)


@dataclass(frozen=True)
class ControllerConfig:
    """PID gains (scalars, or one value per task), clamp, temperature, exploration."""

    k_p: float | tuple[float, ...] = 1.0
    k_i: float | tuple[float, ...] = 0.1
    k_d: float | tuple[float, ...] = 0.0
    i_max: float = 10.0
    tau: float = 1.0
    eps_explore: float = 0.05

    def __post_init__(self):
        for name in ("k_p", "k_i", "k_d"):
            object.__setattr__(self, name, _as_gain(name, getattr(self, name)))
        if not self.i_max > 0:
            raise ConfigError("i_max must be positive", "i_max")
        if not self.tau > 0:
            raise ConfigError("tau must be positive", "tau")
        if not 0 <= self.eps_explore < 1:
            raise ConfigError("eps_explore must lie in [0, 1)", "eps_explore")


@dataclass
class ControllerState:
    """Within-epoch counts, running reference, clipped integral and last deficit."""

    K: int
    N: np.ndarray = field(init=False)
    backlog: np.ndarray = field(init=False)
    I: np.ndarray = field(init=False)
    e_prev: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.K < 1:
            raise ContractViolation("controller needs at least one task")
        self.reset()

    def reset(self) -> None:
        self.N = np.zeros(self.K, dtype=np.int64)
        # N_ref - N is kept instead of N_ref: it stays O(1), so long epochs
        # do not lose precision in the deficit
        self.backlog = np.zeros(self.K)
        self.I = np.zeros(self.K)
        self.e_prev = np.zeros(self.K)

    @property
    def blocks(self) -> int:
        return int(self.N.sum())

    @property
    def n_ref(self) -> np.ndarray:
        return self.N + self.backlog

    def discrepancy(self) -> np.ndarray:
        """Post-execution tracking error d = N - N_ref."""
        return -self.backlog


def compute_deficits(cs: ControllerState, f) -> np.ndarray:
    """Advance the reference by one block of plan ``f``; return e = N_ref - N."""
    cs.backlog = cs.backlog + np.asarray(f, dtype=np.float64)
    return cs.backlog.copy()


def pid_logits(cs: ControllerState, cfg: ControllerConfig, e) -> tuple[np.ndarray, np.ndarray]:
    """PID logits from the deficit; updates the clipped integral in place.

    Returns ``(nu, delta_e)``.
    """
    cs.I = np.clip(cs.I + e, -cfg.i_max, cfg.i_max)
    delta_e = e - cs.e_prev
    nu = np.multiply(cfg.k_p, e) + np.multiply(cfg.k_i, cs.I) + np.multiply(cfg.k_d, delta_e)
    return nu, delta_e


def selection_probabilities(nu, cfg: ControllerConfig) -> np.ndarray:
    """(1 - eps) softmax(nu / tau) + eps / K, with max-subtraction.

    Deliberately not renormalised afterwards so the eps/K floor holds exactly.
    """
    nu = np.asarray(nu, dtype=np.float64)
    z = nu / cfg.tau
    z = np.exp(z - z.max())
    K = nu.size
    return (1.0 - cfg.eps_explore) * (z / z.sum()) + cfg.eps_explore / K


def inverse_cdf(p: np.ndarray, u):
    """Index of the category that uniform draw(s) ``u`` in [0, 1) fall into."""
    c = np.cumsum(p)
    idx = np.searchsorted(c, np.asarray(u) * c[-1], side="right")
    return np.minimum(idx, p.size - 1)


def sample_task(nu, cfg: ControllerConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    p = selection_probabilities(nu, cfg)
    return int(inverse_cdf(p, rng.random())), p


def max_deficit_select(e) -> int:
    """Largest deficit wins; ties go to the lowest index."""
    return int(np.argmax(e))


def baseline_policy(kind: Policy | str, m: int, f, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Non-feedback selection rules; ``m`` is the 1-based block index in the epoch.

    Returns the task and the distribution it was drawn from (a one-hot
    vector for deterministic rules).  One uniform draw is consumed either way.
    """
    kind = Policy(kind)
    f = np.asarray(f, dtype=np.float64)
    K = f.size
    u = rng.random()
    if kind is Policy.RANDOM:
        p = np.full(K, 1.0 / K)
    elif kind is Policy.IID_FROM_PLAN:
        p = f
    elif kind is Policy.ROUND_ROBIN:
        p = np.zeros(K)
        p[(m - 1) % K] = 1.0
        return (m - 1) % K, p
    else:
        raise ContractViolation(f"{kind.value} is not a baseline policy")
    return int(inverse_cdf(p, u)), p


def record_execution(cs: ControllerState, chosen: int, e) -> None:
    if not 0 <= chosen < cs.K:
        raise ContractViolation(f"task {chosen} out of range for K={cs.K}")
    cs.N[chosen] += 1
    cs.backlog[chosen] -= 1.0
    cs.e_prev = np.array(e, dtype=np.float64, copy=True)


def select(
    policy: Policy | str,
    cs: ControllerState,
    cfg: ControllerConfig,
    f,
    rng: np.random.Generator,
) -> dict:
    """One pre-decision step: deficits, PID internals, then the policy's choice.

    The PID internals are maintained for every policy so the trace reports
    them uniformly.  Returns a dict with ``task, e, nu, p, delta_e``.
    """
    policy = Policy(policy)
    m = cs.blocks + 1
    e = compute_deficits(cs, f)
    nu, delta_e = pid_logits(cs, cfg, e)
    if policy is Policy.CONTROLG:
        k, p = sample_task(nu, cfg, rng)
    elif policy is Policy.MAX_DEFICIT:
        rng.random()
        k = max_deficit_select(e)
        p = np.zeros(cs.K)
        p[k] = 1.0
    else:
        k, p = baseline_policy(policy, m, f, rng)
    return {"task": k, "e": e, "nu": nu, "p": p, "delta_e": delta_e}
