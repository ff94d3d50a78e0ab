"""Per-objective difficulty and normalized-loss state.

Difficulty is a clipped EMA of robust-normalized spectral demand and
interference.  The normalized loss divides each raw loss by a scale fixed
during warm-up, then smooths it, so the planner never sees loss units.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractViolation

MAD_CONSISTENCY = 1.4826
ROBUST_CLIP = 3.0


@dataclass(frozen=True)
class DifficultyConfig:
    alpha: float = 1.0
    beta: float = 0.25
    rho: float = 0.3
    rho_L: float = 0.3
    d_min: float = 0.0
    d_max: float = 1.0
    eps_stab: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative", "alpha")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative", "beta")
        if not self.alpha + self.beta > 0:
            raise ConfigError("alpha + beta must be positive", "alpha")
        if not 0 <= self.rho <= 1:
            raise ConfigError("rho must lie in [0, 1]", "rho")
        if not 0 <= self.rho_L <= 1:
            raise ConfigError("rho_L must lie in [0, 1]", "rho_L")
        if not 0 <= self.d_min < self.d_max:
            raise ConfigError("need 0 <= d_min < d_max", "d_min")
        if not self.eps_stab > 0:
            raise ConfigError("eps_stab must be positive", "eps_stab")


@dataclass(frozen=True)
class ObjectiveState:
    """Difficulty, normalized loss and warm-up loss scale for each task.

    ``warmup_peak`` is the largest normalized loss seen during warm-up; the
    planner seeds its reference point from it.
    """

    D: np.ndarray
    L_tilde: np.ndarray
    L_scale: np.ndarray | None = None
    warmup_peak: np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def initial(cls, K: int, cfg: DifficultyConfig) -> "ObjectiveState":
        return cls(D=np.full(K, cfg.d_min), L_tilde=np.ones(K))

    @property
    def K(self) -> int:
        return self.D.size


def robust_normalize(x, eps_stab: float = 1e-12) -> np.ndarray:
    """Median/MAD z-score clipped to +-3, mapped affinely onto [0, 1].

    A constant vector maps to 0.5 everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1 or not np.all(np.isfinite(x)):
        raise ContractViolation("robust_normalize needs a finite, non-empty vector")
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    z = np.clip((x - med) / (MAD_CONSISTENCY * mad + eps_stab), -ROBUST_CLIP, ROBUST_CLIP)
    return (z + ROBUST_CLIP) / (2.0 * ROBUST_CLIP)


def _check_len(name: str, v, K: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (K,):
        raise ContractViolation(f"{name} must have length {K}, got shape {v.shape}")
    return v


def update_difficulty(state: ObjectiveState, cfg: DifficultyConfig, rq, conf) -> ObjectiveState:
    rq = _check_len("rq", rq, state.K)
    conf = _check_len("conf", conf, state.K)
    drive = cfg.alpha * robust_normalize(rq, cfg.eps_stab) + cfg.beta * robust_normalize(conf, cfg.eps_stab)
    D = np.clip((1.0 - cfg.rho) * state.D + cfg.rho * drive, cfg.d_min, cfg.d_max)
    return replace(state, D=D)


def update_normalized_loss(state: ObjectiveState, cfg: DifficultyConfig, raw_losses) -> ObjectiveState:
    if state.L_scale is None:
        raise ContractViolation("loss scales are not initialised; run warm-up first")
    raw = _check_len("raw_losses", raw_losses, state.K)
    target = raw / (state.L_scale + cfg.eps_stab)
    return replace(state, L_tilde=(1.0 - cfg.rho_L) * state.L_tilde + cfg.rho_L * target)


def warmup_scales(suite, steps: int, eta: float, rng: np.random.Generator, Z0, cfg: DifficultyConfig) -> ObjectiveState:
    """Fix per-task loss scales from a short single-task run of each objective.

    Every task starts from ``Z0`` and takes ``steps`` noisy descent steps on
    its own loss; the scale is the mean of the losses observed before each
    step.  ``Z0`` itself is not modified.
    """
    if steps < 1:
        raise ConfigError("warm-up needs at least one step", "warmup_steps")
    K = len(suite)
    scale = np.empty(K)
    peak_raw = np.empty(K)
    initial = suite.losses(Z0)
    for k, obj in enumerate(suite):
        Z = np.array(Z0, dtype=np.float64, copy=True)
        seen = []
        for _ in range(steps):
            seen.append(obj.loss(Z))
            Z = Z - eta * obj.noisy_grad(Z, rng)
        scale[k] = float(np.mean(seen))
        peak_raw[k] = max(seen)
    denom = scale + cfg.eps_stab
    return ObjectiveState(
        D=np.full(K, cfg.d_min),
        L_tilde=initial / denom,
        L_scale=scale,
        warmup_peak=peak_raw / denom,
    )
