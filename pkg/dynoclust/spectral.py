"""
Spectral Dynamic Means - eigendecomposition relaxation of the kernelized
D-Means cost, rounding to a feasible partition, and old-cluster matching.

With the revival penalty replaced by n/(γ+n)·Q·Δt, the batch cost becomes a
trace minimization over cluster indicators. Dropping the indicator structure
leaves an eigenproblem on

    G = [[K^YY,              K^YΦ·Γ^{1/2}     ],
         [Γ^{1/2}·K^YΦᵀ,     Γ·diag(K^ΦΦ) + Ω ]],    Ω_kk = Q·Δt_k

whose eigenvectors with eigenvalue above λ span the relaxed optimum. Rows of
those eigenvectors are normalized, rotated to the closest indicator matrix
by alternating rounding and orthogonal Procrustes steps, and the resulting
clusters are linked to old clusters by an exact matching.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from dynoclust.core import (
    NEW,
    Batch,
    BatchResult,
    DimensionMismatchError,
    DMeansConfig,
    gamma_of,
    restart_rng,
)
from dynoclust.kdmeans import finish_kernel_batch, kd_objective
from dynoclust.kernels import GramTables, KernelSpec, batch_context, build_gram_tables
from dynoclust.matching import build_match_costs, solve_matching
from dynoclust.sparse_centers import KernelStreamState

logger = logging.getLogger(__name__)

JACOBI_RTOL = 1e-10
JACOBI_MAX_SWEEPS = 100
ZERO_ROW_NORM = 1e-12
ROUNDING_MAX_ITERS = 100


class EigenSolverError(RuntimeError):
    """Raised when the Jacobi eigensolver does not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class SimilarityBlock:
    """G for one batch with its Γ and Ω diagonals."""
    G: np.ndarray
    gamma_diag: np.ndarray
    omega_diag: np.ndarray
    n_data: int
    n_old: int


@dataclass
class SpectralWorkspace:
    """Intermediate products of one SD-Means batch."""
    eigvals: np.ndarray
    eigvecs: np.ndarray
    V_star: np.ndarray
    V_bar: np.ndarray
    U: np.ndarray
    X: np.ndarray
    frobenius_trace: List[float] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)


def build_G(gram: GramTables, state: KernelStreamState, cfg: DMeansConfig) -> SimilarityBlock:
    """
    Assemble the similarity matrix G from a batch's Gram tables.

    With no old clusters G is K^YY. The matrix is symmetrized after assembly.
    """
    n_data, n_old = gram.n_data, gram.n_old
    gammas = np.array([gamma_of(c.weight, c.staleness, cfg.tau) for c in state.centers])
    omegas = cfg.q_penalty * np.array([c.staleness for c in state.centers], dtype=float)

    g = np.zeros((n_data + n_old, n_data + n_old))
    g[:n_data, :n_data] = gram.k_yy
    if n_old:
        root = np.sqrt(gammas)
        g[:n_data, n_data:] = gram.k_yphi * root
        g[n_data:, :n_data] = g[:n_data, n_data:].T
        g[n_data:, n_data:] = np.diag(gammas * gram.k_phiphi_diag + omegas)
    g = 0.5 * (g + g.T)
    return SimilarityBlock(G=g, gamma_diag=gammas, omega_diag=omegas, n_data=n_data, n_old=n_old)


def jacobi_eigh(
    a: np.ndarray,
    rtol: float = JACOBI_RTOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi rotations for a symmetric matrix.

    Sweeps every (p, q) pair in row order until the off-diagonal Frobenius
    norm is at most rtol·‖a‖_F.

    Returns:
        (eigenvalues, eigenvectors as columns), unsorted

    Raises:
        EigenSolverError: If max_sweeps sweeps do not reach the tolerance
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    p_mat = np.eye(n)
    tol = rtol * np.linalg.norm(a)

    def off_norm() -> float:
        return math.sqrt(max(0.0, float(np.sum(a ** 2) - np.sum(np.diag(a) ** 2))))

    for sweep in range(max_sweeps):
        if off_norm() <= tol:
            return np.diag(a).copy(), p_mat
        for k in range(n - 1):
            for l in range(k + 1, n):
                a_kl = a[k, l]
                if a_kl == 0.0:
                    continue
                phi = (a[l, l] - a[k, k]) / (2.0 * a_kl)
                t = 1.0 / (abs(phi) + math.sqrt(phi ** 2 + 1.0))
                if phi < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t ** 2 + 1.0)
                s = t * c

                col_k, col_l = a[:, k].copy(), a[:, l].copy()
                a[:, k] = c * col_k - s * col_l
                a[:, l] = s * col_k + c * col_l
                row_k, row_l = a[k, :].copy(), a[l, :].copy()
                a[k, :] = c * row_k - s * row_l
                a[l, :] = s * row_k + c * row_l
                a[k, l] = a[l, k] = 0.0

                vec_k, vec_l = p_mat[:, k].copy(), p_mat[:, l].copy()
                p_mat[:, k] = c * vec_k - s * vec_l
                p_mat[:, l] = s * vec_k + c * vec_l
        logger.debug(f"Jacobi sweep {sweep + 1}: off-diagonal norm {off_norm():.3e}")

    residual = off_norm()
    if residual <= tol:
        return np.diag(a).copy(), p_mat
    raise EigenSolverError(
        f"Jacobi did not converge in {max_sweeps} sweeps: off-diagonal norm {residual:.3e} > {tol:.3e}",
        residual=residual,
    )


def sym_eigendecomp(g: np.ndarray, method: str = "eigh") -> Tuple[np.ndarray, np.ndarray]:
    """
    Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    Args:
        g: Symmetric matrix
        method: "eigh" (LAPACK) or "jacobi"

    Returns:
        (eigvals, eigvecs) with eigvecs[:, i] the unit eigenvector of eigvals[i]
    """
    if method == "eigh":
        vals, vecs = np.linalg.eigh(g)
    elif method == "jacobi":
        vals, vecs = jacobi_eigh(g)
    else:
        raise ValueError(f"Unknown eigensolver {method!r}")
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def select_V(eigvals: np.ndarray, eigvecs: np.ndarray, lambda_: float) -> np.ndarray:
    """Eigenvectors with eigenvalue > λ; the top eigenvector if there are none."""
    keep = eigvals > lambda_
    if not np.any(keep):
        return eigvecs[:, :1]
    return eigvecs[:, keep]


def normalize_rows(v_star: np.ndarray, n_data: int) -> Tuple[np.ndarray, List[str]]:
    """
    Drop the old-cluster rows and scale every data row to unit length.

    A row with norm below 1e-12 becomes the indicator of its largest-magnitude
    entry and is flagged.

    Returns:
        (V_bar, flags)
    """
    v_bar = np.array(v_star[:n_data], dtype=float)
    norms = np.linalg.norm(v_bar, axis=1)
    flags = []
    zero = np.flatnonzero(norms < ZERO_ROW_NORM)
    for i in zero:
        j = int(np.argmax(np.abs(v_bar[i])))
        v_bar[i] = 0.0
        v_bar[i, j] = 1.0
        norms[i] = 1.0
    if len(zero):
        msg = f"{len(zero)} zero row(s) in the relaxed solution replaced by indicators"
        logger.warning(msg)
        flags.append(msg)
    return v_bar / norms[:, None], flags


def init_U(v_bar: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Seed the rotation with the most mutually orthogonal rows of V_bar.

    The first row is drawn at random; each further row minimizes its largest
    absolute cosine to the rows already picked. The picked rows, as columns,
    are orthonormalized by QR with a positive R diagonal.
    """
    n, width = v_bar.shape
    if width > n:
        raise ValueError(f"init_U needs at most {n} columns, got {width}")
    picked = [int(rng.integers(n))]
    worst_cos = np.zeros(n)
    for _ in range(1, width):
        worst_cos = np.maximum(worst_cos, np.abs(v_bar @ v_bar[picked[-1]]))
        candidates = worst_cos.copy()
        candidates[picked] = np.inf
        picked.append(int(np.argmin(candidates)))

    q, r = np.linalg.qr(v_bar[picked].T)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def round_X(v_bar: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Indicator of the largest entry of each row of V_bar·U (lowest column on ties)."""
    scores = v_bar @ u
    x = np.zeros_like(scores)
    x[np.arange(len(scores)), np.argmax(scores, axis=1)] = 1.0
    return x


def refine_U(x: np.ndarray, v_bar: np.ndarray) -> np.ndarray:
    """Orthogonal U minimizing ‖X − V_bar·U‖_F (Procrustes via SVD of XᵀV_bar)."""
    r, _, w_t = np.linalg.svd(x.T @ v_bar)
    return w_t.T @ r.T


def rounding_error(x: np.ndarray, v_bar: np.ndarray, u: np.ndarray) -> float:
    return float(np.sum((x - v_bar @ u) ** 2))


def solve_feasible(
    v_bar: np.ndarray,
    rng: np.random.Generator,
    max_iters: int = ROUNDING_MAX_ITERS,
) -> Tuple[np.ndarray, np.ndarray, List[float], bool]:
    """
    Alternate round_X and refine_U until the rounding error stops decreasing.

    Returns:
        (X, U, frobenius_trace, converged) with the best X seen
    """
    u = init_U(v_bar, rng)
    trace: List[float] = []
    best_x, best_u, best_err = None, None, math.inf
    converged = False

    for _ in range(max_iters):
        x = round_X(v_bar, u)
        err = rounding_error(x, v_bar, u)
        previous = trace[-1] if trace else None
        trace.append(err)
        if err < best_err:
            best_x, best_u, best_err = x, u, err
        if previous is not None and err >= previous - 1e-12 * max(1.0, previous):
            converged = True
            break
        u = refine_U(x, v_bar)

    return best_x, best_u, trace, converged


def relaxed_bound(block: SimilarityBlock, lambda_: float, eigvals: Optional[np.ndarray] = None) -> float:
    """
    Optimal value of the relaxed problem, a lower bound on the
    modified-penalty cost of every feasible labeling.

    tr(K^YY) + Σ_k γ_k·K^ΦΦ_kk + Σ_k (Ω_kk − λ) − Σ_{σ_i > λ}(σ_i − λ),
    with the top eigenvalue alone when none exceeds λ.
    """
    if eigvals is None:
        eigvals, _ = sym_eigendecomp(block.G)
    above = eigvals[eigvals > lambda_]
    if len(above) == 0:
        above = eigvals[:1]
    return float(np.trace(block.G) - lambda_ * block.n_old - np.sum(above - lambda_))


def relax(block: SimilarityBlock, cfg: DMeansConfig) -> SpectralWorkspace:
    """
    Solve the relaxed problem: eigenpairs of G, V★ and the normalized V_bar.

    More than N eigenvectors above λ cannot all be rounded to nonempty
    clusters of N points; only the top N are kept (flagged).
    """
    eigvals, eigvecs = sym_eigendecomp(block.G, cfg.eigensolver)
    flags = []
    v_star = select_V(eigvals, eigvecs, cfg.lambda_)
    if v_star.shape[1] > block.n_data:
        msg = f"{v_star.shape[1]} eigenvalues above lambda; keeping the top {block.n_data}"
        logger.warning(msg)
        flags.append(msg)
        v_star = v_star[:, :block.n_data]
    v_bar, row_flags = normalize_rows(v_star, block.n_data)
    flags.extend(row_flags)
    width = v_star.shape[1]
    return SpectralWorkspace(
        eigvals=eigvals,
        eigvecs=eigvecs,
        V_star=v_star,
        V_bar=v_bar,
        U=np.eye(width),
        X=np.zeros((block.n_data, width)),
        flags=flags,
    )


def _partition(x: np.ndarray) -> List[np.ndarray]:
    cols = np.argmax(x, axis=1)
    return [np.flatnonzero(cols == j) for j in range(x.shape[1]) if np.any(cols == j)]


def sdmeans_batch(
    batch: Batch,
    state: KernelStreamState,
    spec: KernelSpec,
    cfg: DMeansConfig,
) -> Tuple[BatchResult, KernelStreamState]:
    """
    Cluster one batch with Spectral Dynamic Means.

    Builds G, keeps the eigenvectors above λ, rounds them to a partition
    (re-seeded per restart; the lowest exact cost wins), links the partition
    to old clusters by matching, and folds the labeling into the sparse state.

    Returns:
        (BatchResult, next KernelStreamState). `objective` is the
        modified-penalty cost the relaxation bounds; `extras` carries
        `objective_exact` and `relaxed_bound`.

    Raises:
        DimensionMismatchError: If batch.dim != state.dim
        EigenSolverError: If the Jacobi solver is selected and fails
    """
    if batch.dim != state.dim:
        raise DimensionMismatchError(f"Batch t={batch.t} has dim {batch.dim}, state has dim {state.dim}")

    context = batch_context(spec, batch.points)
    gram = build_gram_tables(batch.points, state.centers, spec, context)
    block = build_G(gram, state, cfg)
    workspace = relax(block, cfg)
    bound = relaxed_bound(block, cfg.lambda_, workspace.eigvals)
    flags = list(gram.flags) + workspace.flags

    best = None
    for r in range(cfg.restarts):
        x, u, trace, converged = solve_feasible(workspace.V_bar, restart_rng(cfg.seed, batch.t, r))
        partition = _partition(x)
        match = solve_matching(build_match_costs(partition, state, gram, cfg))

        labels = np.full(batch.n_points, NEW, dtype=int)
        next_id = state.next_id
        for l, idx in enumerate(partition):
            target = match.assignment[l]
            if target == NEW:
                target, next_id = next_id, next_id + 1
            labels[idx] = target

        exact = kd_objective(labels, state, gram, cfg)
        logger.debug(f"t={batch.t} restart {r}: {len(partition)} clusters, exact J={exact:.6g}")
        if best is None or exact < best[0]:
            best = (exact, labels, next_id, replace(workspace, U=u, X=x, frobenius_trace=trace), converged, r)

    exact, labels, next_id, workspace, converged, r = best
    trace = workspace.frobenius_trace
    modified = kd_objective(labels, state, gram, cfg, penalty="modified")
    if modified < bound - 1e-8 * max(1.0, abs(bound)):
        msg = f"modified objective {modified:.6g} below relaxed bound {bound:.6g}"
        logger.warning(msg)
        flags.append(msg)
    if not converged:
        flags.append("rounding_max_iters_reached")

    proxies, counts, new_state, fold_flags = finish_kernel_batch(
        batch, state, labels, spec, cfg, context, next_id
    )
    flags.extend(fold_flags)

    result = BatchResult(
        labels=labels,
        centers=proxies,
        objective=modified,
        active_set=frozenset(counts),
        iterations=len(trace),
        converged=converged,
        objective_trace=tuple(trace),
        restart_index=r,
        next_id=next_id,
        counts=counts,
        flags=flags,
        extras={
            "objective_exact": exact,
            "relaxed_bound": bound,
            "n_eigvecs": float(workspace.V_star.shape[1]),
            "max_achieved_eps": max((c.achieved_eps for c in new_state.centers), default=0.0),
        },
    )
    return result, new_state
