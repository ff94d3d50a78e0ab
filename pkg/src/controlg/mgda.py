"""Min-norm point in the convex hull of task gradients, and conflict scores.

MGDA is used here purely as a measurement: the weights ``lambda*`` say which
objectives currently pin down the local Pareto compromise, and they weight
the pairwise negative-cosine conflicts into a per-task interference score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ConvergenceError


@dataclass(frozen=True)
class GradientSet:
    """K gradient rows of dimension d, with their norms and a zero-row mask."""

    rows: np.ndarray
    norms: np.ndarray
    zero: np.ndarray

    @classmethod
    def from_rows(cls, rows, zero_tol: float = 0.0) -> "GradientSet":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ContractViolation(f"need a (K, d) array with K >= 1, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ContractViolation("gradient rows must be finite")
        norms = np.linalg.norm(rows, axis=1)
        return cls(rows=rows, norms=norms, zero=norms <= zero_tol)

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class MgdaSolution:
    lam: np.ndarray
    g_mix_norm_sq: float
    kkt_residual: float
    iterations: int
    zero: np.ndarray


def normalize_gradients(G: GradientSet) -> GradientSet:
    """Scale every nonzero row to unit norm; zero rows stay zero and stay flagged."""
    scale = np.where(G.zero, 1.0, G.norms)
    rows = np.where(G.zero[:, None], 0.0, G.rows / scale[:, None])
    return GradientSet(rows=rows, norms=np.where(G.zero, 0.0, 1.0), zero=G.zero.copy())


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (Michelot's method).

    Repeatedly computes the threshold over the current support and drops
    coordinates that fall below it; terminates in at most ``len(v)`` passes.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ContractViolation("project_simplex needs a finite, non-empty vector")
    support = np.ones(v.size, dtype=bool)
    while True:
        tau = (v[support].sum() - 1.0) / support.sum()
        new_support = support & (v > tau)
        if new_support.sum() == support.sum():
            break
        support = new_support
    x = np.maximum(v - tau, 0.0)
    return x / x.sum()


def _fw_gap(Q: np.ndarray, lam: np.ndarray) -> tuple[float, float]:
    """Return (||G lam||^2, max_k (||G lam||^2 - <g_k, G lam>)_+)."""
    Ql = Q @ lam
    mix = float(lam @ Ql)
    return mix, max(mix - float(Ql.min()), 0.0)


def _polish(Q: np.ndarray, lam: np.ndarray) -> np.ndarray | None:
    """Solve the KKT system exactly on the support of ``lam``.

    Drops the most negative coordinate and retries when the equality-
    constrained solution leaves the simplex.  Returns None when no feasible
    candidate is found.
    """
    support = np.flatnonzero(lam > 1e-12)
    while support.size:
        s = support.size
        A = np.zeros((s + 1, s + 1))
        A[:s, :s] = Q[np.ix_(support, support)]
        A[:s, s] = 1.0
        A[s, :s] = 1.0
        b = np.zeros(s + 1)
        b[s] = 1.0
        sol = np.linalg.lstsq(A, b, rcond=None)[0]
        x = sol[:s]
        if not np.all(np.isfinite(x)) or abs(x.sum() - 1.0) > 1e-9:
            return None
        if np.all(x >= 0.0):
            out = np.zeros_like(lam)
            out[support] = x
            return out / out.sum()
        support = np.delete(support, int(np.argmin(x)))
    return None


def _solve_qp(Q: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    K = Q.shape[0]
    step = 1.0 / max(float(np.abs(Q).sum(axis=1).max()), 1e-300)
    lam = np.full(K, 1.0 / K)
    prev = lam.copy()
    momentum = 1.0
    obj = 0.5 * float(lam @ Q @ lam)
    best, best_gap = lam, _fw_gap(Q, lam)[1]
    it = 0
    for it in range(1, max_iter + 1):
        nxt_m = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        y = lam + ((momentum - 1.0) / nxt_m) * (lam - prev)
        cand = project_simplex(y - step * (Q @ y))
        cand_obj = 0.5 * float(cand @ Q @ cand)
        if cand_obj > obj:
            # adaptive restart: fall back to a plain projected-gradient step
            nxt_m = 1.0
            cand = project_simplex(lam - step * (Q @ lam))
            cand_obj = 0.5 * float(cand @ Q @ cand)
        prev, lam, obj, momentum = lam, cand, cand_obj, nxt_m
        gap = _fw_gap(Q, lam)[1]
        if gap < best_gap:
            best, best_gap = lam, gap
        if it % 25 == 0 or gap <= tol:
            polished = _polish(Q, lam)
            if polished is not None:
                pgap = _fw_gap(Q, polished)[1]
                if pgap <= max(gap, tol) and 0.5 * float(polished @ Q @ polished) <= obj + 1e-15:
                    lam, gap = polished, pgap
                    if gap < best_gap:
                        best, best_gap = lam, gap
        if best_gap <= tol:
            return best, it
    raise ConvergenceError(
        f"min-norm solver stopped after {max_iter} iterations with KKT residual {best_gap:.3e} > {tol:.1e}",
        best=best,
    )


def solve_min_norm(G: GradientSet, tol: float = 1e-8, max_iter: int = 10_000) -> MgdaSolution:
    """Minimise ||sum_k lam_k g_k||^2 over the simplex.

    Zero rows are excluded from the QP and receive weight 0; if every row is
    zero the weights are uniform and the mixture is trivially zero.  The
    returned ``kkt_residual`` is the Frank-Wolfe gap
    ``||g_mix||^2 - min_k <g_k, g_mix>``, which also bounds the objective
    suboptimality.
    """
    if not tol > 0:
        raise ContractViolation(f"tol must be positive, got {tol}")
    K = G.K
    active = np.flatnonzero(~G.zero)
    lam = np.zeros(K)
    iterations = 0
    if active.size == 0:
        lam[:] = 1.0 / K
        return MgdaSolution(lam=lam, g_mix_norm_sq=0.0, kkt_residual=0.0, iterations=0, zero=G.zero.copy())
    if active.size == 1:
        lam[active] = 1.0
    else:
        rows = G.rows[active]
        Q = rows @ rows.T
        try:
            sub, iterations = _solve_qp(Q, tol, max_iter)
        except ConvergenceError as exc:
            best = np.zeros(K)
            best[active] = exc.best
            raise ConvergenceError(str(exc), best=best) from None
        lam[active] = sub
    g_mix = lam @ G.rows
    mix = float(g_mix @ g_mix)
    dots = G.rows[active] @ g_mix
    resid = max(mix - float(dots.min()), 0.0)
    return MgdaSolution(lam=lam, g_mix_norm_sq=mix, kkt_residual=resid, iterations=iterations, zero=G.zero.copy())


def cosine_matrix(G: GradientSet) -> np.ndarray:
    """Pairwise cosines; any pair involving a zero row gets cosine 0."""
    scale = np.where(G.zero, 1.0, G.norms)
    U = np.where(G.zero[:, None], 0.0, G.rows / scale[:, None])
    C = np.clip(U @ U.T, -1.0, 1.0)
    np.fill_diagonal(C, np.where(G.zero, 0.0, 1.0))
    return C


def conflict_scores(G_raw: GradientSet, lam) -> np.ndarray:
    """Interference Conf_k = sum_{j != k} lam_j * max(-cos(g_k, g_j), 0)."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (G_raw.K,) or np.any(lam < -1e-12) or abs(lam.sum() - 1.0) > 1e-9:
        raise ContractViolation("lam must be a point of the simplex with one entry per task")
    c = np.maximum(-cosine_matrix(G_raw), 0.0)
    np.fill_diagonal(c, 0.0)
    return c @ lam
