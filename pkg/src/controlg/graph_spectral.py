"""Sparse graphs, normalized-Laplacian quadratic forms and a dense eigen oracle.

The sensing path only ever touches the edge list: the Dirichlet energy is a
single pass over edges and never materialises the Laplacian.  The dense
helpers (``normalized_laplacian``, ``eig_sym``, ``lowpass_filter_apply``) exist
for the synthetic testbed and for checking the edge form against linear
algebra, so they are capped at desk-scale sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ContractViolation

EIG_SIZE_CAP = 512


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph stored as a sorted coordinate list.

    ``rows[e] < cols[e]`` for every edge ``e``; each undirected edge is stored
    once.  Build instances through :meth:`from_edges` or
    :meth:`from_adjacency`, which enforce the invariants.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> "Graph":
        """Build from ``(i, j, w)`` triples with ``i != j`` and ``w >= 0``.

        Each triple is an undirected edge; ``(i, j)`` and ``(j, i)`` name the
        same edge and may not both appear.
        """
        if n < 1:
            raise ContractViolation(f"graph needs at least one node, got n={n}")
        seen: dict[tuple[int, int], float] = {}
        for i, j, w in edges:
            i, j, w = int(i), int(j), float(w)
            if not (0 <= i < n and 0 <= j < n):
                raise ContractViolation(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise ContractViolation(f"self-loop at node {i}")
            if not np.isfinite(w) or w < 0:
                raise ContractViolation(f"edge ({i}, {j}) has invalid weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ContractViolation(f"duplicate edge {key}")
            seen[key] = w
        keys = sorted(seen)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        weights = np.array([seen[k] for k in keys], dtype=np.float64)
        return cls._finish(n, rows, cols, weights)

    @classmethod
    def from_adjacency(cls, A: np.ndarray) -> "Graph":
        """Build from a dense adjacency; directed input is symmetrized as (A + A^T)/2."""
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractViolation(f"adjacency must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)) or np.any(A < 0):
            raise ContractViolation("adjacency entries must be finite and nonnegative")
        if np.any(np.diag(A) != 0):
            raise ContractViolation("adjacency has self-loops on the diagonal")
        S = 0.5 * (A + A.T)
        rows, cols = np.nonzero(np.triu(S, k=1))
        return cls._finish(A.shape[0], rows.astype(np.int64), cols.astype(np.int64), S[rows, cols])

    @classmethod
    def _finish(cls, n, rows, cols, weights) -> "Graph":
        degrees = np.zeros(n)
        np.add.at(degrees, rows, weights)
        np.add.at(degrees, cols, weights)
        isolated = np.flatnonzero(degrees <= 0)
        if isolated.size:
            raise ContractViolation(f"isolated nodes are not supported: {isolated[:10].tolist()}")
        for arr in (rows, cols, weights, degrees):
            arr.setflags(write=False)
        return cls(n=n, rows=rows, cols=cols, weights=weights, degrees=degrees)

    @property
    def m(self) -> int:
        return int(self.rows.size)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        A[self.rows, self.cols] = self.weights
        A[self.cols, self.rows] = self.weights
        return A

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.weights)]


def ring_graph(n: int) -> Graph:
    if n < 3:
        raise ContractViolation(f"ring needs n >= 3, got {n}")
    return Graph.from_edges(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


def grid_graph(rows: int, cols: int) -> Graph:
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1, 1.0))
            if r + 1 < rows:
                edges.append((v, v + cols, 1.0))
    return Graph.from_edges(rows * cols, edges)


def erdos_renyi_graph(n: int, p: float, rng: np.random.Generator, max_tries: int = 100) -> Graph:
    """G(n, p) with unit weights, resampled until no node is isolated."""
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_tries):
        keep = rng.random(iu.size) < p
        i, j = iu[keep], ju[keep]
        deg = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
        if np.all(deg > 0):
            return Graph.from_edges(n, zip(i, j, np.ones(i.size)))
    raise ContractViolation(f"G({n}, {p}) kept producing isolated nodes after {max_tries} draws")


def read_graph(path: str | Path) -> Graph:
    """Parse the plain-text format: a header ``n m`` then ``m`` lines ``i j w``.

    Indices are 0-based with ``i < j``.  Blank lines and ``#`` comments are
    ignored.
    """
    lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))
    if not lines:
        raise ContractViolation(f"{path}: empty graph file")
    lineno, head = lines[0]
    if len(head) != 2:
        raise ContractViolation(f"{path}:{lineno}: header must be 'n m'")
    n, m = int(head[0]), int(head[1])
    if len(lines) - 1 != m:
        raise ContractViolation(f"{path}: header declares {m} edges, found {len(lines) - 1}")
    edges = []
    for lineno, parts in lines[1:]:
        if len(parts) != 3:
            raise ContractViolation(f"{path}:{lineno}: expected 'i j w'")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        if not i < j:
            raise ContractViolation(f"{path}:{lineno}: edge ({i}, {j}) must satisfy i < j")
        edges.append((i, j, w))
    try:
        return Graph.from_edges(n, edges)
    except ContractViolation as exc:
        raise ContractViolation(f"{path}: {exc}") from None


def write_graph(g: Graph, path: str | Path) -> None:
    out = [f"{g.n} {g.m}"]
    out += [f"{i} {j} {w!r}" for i, j, w in g.edges()]
    Path(path).write_text("\n".join(out) + "\n")


def _check_signal(g: Graph, H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if H.ndim != 2 or H.shape[0] != g.n:
        raise ContractViolation(f"signal has shape {H.shape}, graph has n={g.n}")
    if not np.all(np.isfinite(H)):
        raise ContractViolation("signal contains non-finite entries")
    return H


def normalized_laplacian_quadform(g: Graph, H: np.ndarray) -> float:
    """Dirichlet energy tr(H^T L H) of a node signal, summed over edges.

    Each stored edge stands for both orientations of the symmetric sum, so
    the usual factor 1/2 cancels.
    """
    H = _check_signal(g, H)
    Y = H / np.sqrt(g.degrees)[:, None]
    diff = Y[g.rows] - Y[g.cols]
    return float(np.dot(g.weights, np.einsum("ij,ij->i", diff, diff)))


def rayleigh_quotient(g: Graph, H: np.ndarray, eps_stab: float = 1e-12) -> float:
    """Scale-free spectral demand E(H) / (||H||_F^2 + eps_stab); a zero signal gives 0."""
    if not eps_stab > 0:
        raise ContractViolation(f"eps_stab must be positive, got {eps_stab}")
    H = _check_signal(g, H)
    return normalized_laplacian_quadform(g, H) / (float(np.sum(H * H)) + eps_stab)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """Dense I - D^{-1/2} A D^{-1/2}."""
    s = 1.0 / np.sqrt(g.degrees)
    L = -(g.adjacency() * s[:, None] * s[None, :])
    L[np.diag_indices(g.n)] += 1.0
    return L


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"eig_sym needs a square matrix, got {M.shape}")
    if M.shape[0] > EIG_SIZE_CAP:
        raise ContractViolation(f"eig_sym is a desk-scale oracle (n <= {EIG_SIZE_CAP}), got n={M.shape[0]}")
    if not np.all(np.isfinite(M)):
        raise ContractViolation("matrix contains non-finite entries")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(M), initial=0.0)):
        raise ContractViolation("matrix is not symmetric")
    return M


def jacobi_eigh(M: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver for small symmetric matrices.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (as columns).  Each sweep visits every off-diagonal pair once.
    """
    A = _check_symmetric(M).copy()
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        # summing the off-diagonal directly; ||A||^2 - ||diag A||^2 cancels badly
        off = np.sqrt(2.0 * np.sum(np.triu(A, k=1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def eig_sym(M: np.ndarray, method: str = "lapack") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    ``method="lapack"`` defers to :func:`numpy.linalg.eigh`; ``"jacobi"``
    uses :func:`jacobi_eigh`.  Either way the residual contract
    ``||MU - U diag(w)||_F <= 1e-9 ||M||_F`` is checked before returning.
    """
    M = _check_symmetric(M)
    if method == "lapack":
        w, U = np.linalg.eigh(M)
    elif method == "jacobi":
        w, U = jacobi_eigh(M)
    else:
        raise ContractViolation(f"unknown eig_sym method {method!r}")
    resid = np.linalg.norm(M @ U - U * w[None, :])
    if resid > 1e-9 * max(np.linalg.norm(M), 1.0):
        raise ContractViolation(f"eigensolver residual {resid:.3e} exceeds contract")
    return w, U


def lowpass_filter_apply(
    g: Graph,
    H: np.ndarray,
    response: Callable[[np.ndarray], np.ndarray],
    eig: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Apply the spectral filter U diag(p(lambda)) U^T to ``H``.

    ``response`` must be non-increasing on [0, 2]; it is sampled on a fine
    grid and at the graph's eigenvalues to check.  A precomputed
    ``eig_sym(normalized_laplacian(g))`` may be passed as ``eig``.
    """
    H = _check_signal(g, H)
    w, U = eig if eig is not None else eig_sym(normalized_laplacian(g))
    lam = np.clip(w, 0.0, 2.0)
    grid = np.union1d(np.linspace(0.0, 2.0, 401), lam)
    vals = np.asarray(response(grid), dtype=np.float64)
    if vals.shape != grid.shape or not np.all(np.isfinite(vals)):
        raise ContractViolation("response must return one finite value per frequency")
    if np.any(np.diff(vals) > 1e-12 * max(1.0, np.max(np.abs(vals)))):
        raise ContractViolation("response is not non-increasing on [0, 2]")
    p = np.asarray(response(lam), dtype=np.float64)
    return U @ (p[:, None] * (U.T @ H))
