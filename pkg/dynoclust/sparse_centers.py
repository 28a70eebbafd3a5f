"""
Sparse Centers - budgeted feature-space memory of old cluster centers.

In feature space an old center is a weighted sum of past data points,
φ = Σ_j a_j ψ(v_j). Every update appends the new points and shrinks the old
coefficients, so the support grows without bound; after each update the
expansion is pruned back to at most m support points by greedy forward
selection on the feature-space error (ā − x)ᵀ W (ā − x), W_ij = κ(v_i, v_j).
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from dynoclust.core import DMeansConfig, gamma_of
from dynoclust.kernels import EuclideanMST, KernelSpec, symmetric_kernel_matrix

logger = logging.getLogger(__name__)

SINGULAR_RIDGE = 1e-10
PIVOT_TOL = 1e-12
INDEFINITE_RTOL = 1e-9


@dataclass(frozen=True)
class SparseCenter:
    """Old cluster whose center is Σ_j coeffs[j]·ψ(support[j])."""
    id: int
    coeffs: np.ndarray
    support: np.ndarray
    weight: float
    staleness: int
    achieved_eps: float = 0.0

    @property
    def proxy(self) -> np.ndarray:
        """Input-space analog Σ a_j v_j (the center itself for a linear kernel)."""
        return self.coeffs @ self.support


@dataclass(frozen=True)
class KernelStreamState:
    """Fold state for the kernel engines."""
    dim: int
    centers: Tuple[SparseCenter, ...] = ()
    next_id: int = 0

    def __post_init__(self):
        ids = [c.id for c in self.centers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Duplicate sparse center ids: {ids}")
        if ids and max(ids) >= self.next_id:
            raise ValueError(f"next_id {self.next_id} must exceed every stored id {max(ids)}")

    @classmethod
    def empty(cls, dim: int) -> "KernelStreamState":
        return cls(dim=dim)


def exact_center_coeffs(history: Sequence[Tuple[float, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unbudgeted expansion of a center over every point it ever absorbed.

    A point absorbed at active step τ weighs 1/(γ_τ + n_τ), shrunk by
    γ_s/(γ_s + n_s) for every later active step s.

    Args:
        history: (γ, assigned points) per active step, oldest first

    Returns:
        (coeffs, points) with one coefficient per absorbed point

    Raises:
        ValueError: If history is empty
    """
    if not history:
        raise ValueError("exact_center_coeffs needs at least one active timestep")

    coeffs, points = [], []
    shrink = 1.0
    for gamma, assigned in reversed(history):
        assigned = np.atleast_2d(np.asarray(assigned, dtype=float))
        n = assigned.shape[0]
        coeffs.append(np.full(n, shrink / (gamma + n)))
        points.append(assigned)
        shrink *= gamma / (gamma + n)
    return np.concatenate(coeffs[::-1]), np.vstack(points[::-1])


def dense_center_update(
    center: Optional[SparseCenter],
    gamma: float,
    assigned: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Append newly assigned points to a center's expansion.

    Old coefficients scale by γ/(γ+n) and each new point enters with
    1/(γ+n). With γ = 0 (or no prior center) the old support is dropped.

    Returns:
        (coeffs, support) of length m + n
    """
    assigned = np.atleast_2d(np.asarray(assigned, dtype=float))
    n = assigned.shape[0]
    new_coeffs = np.full(n, 1.0 / (gamma + n))
    if center is None or gamma == 0:
        return new_coeffs, assigned
    scaled = np.asarray(center.coeffs, dtype=float) * (gamma / (gamma + n))
    return np.concatenate([scaled, new_coeffs]), np.vstack([center.support, assigned])


def psd_projection(w: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Nearest positive semidefinite matrix to a symmetric W (negative eigenvalues zeroed).

    Returns:
        (projected matrix, smallest eigenvalue of W)
    """
    vals, vecs = linalg.eigh(w)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T, float(vals[0])


def _refit(w_ss: np.ndarray, rhs: np.ndarray, flags: List[str]) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.solve(w_ss, rhs, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            msg = f"singular restricted system on {len(rhs)} support points; ridge {SINGULAR_RIDGE}"
            logger.warning(msg)
            flags.append(msg)
            return linalg.solve(w_ss + SINGULAR_RIDGE * np.eye(len(rhs)), rhs, assume_a="sym")


def sparse_reduce(
    coeffs: np.ndarray,
    support: np.ndarray,
    budget: Optional[int],
    spec: KernelSpec,
    context: Optional[EuclideanMST] = None,
) -> Tuple[np.ndarray, np.ndarray, float, List[str]]:
    """
    Prune a center expansion to at most `budget` support points.

    Greedy orthogonal least squares in feature space: each step adds the
    support point that most reduces (ā − x)ᵀW(ā − x), maintained through an
    incremental pivoted Cholesky factor of W. The chosen subset is refit by
    solving W_SS x = (W ā)_S.

    When W is indefinite (possible with mst_rbf) selection and refit use its
    PSD projection instead, and a refit whose coefficients exceed Σ|ā| is
    replaced by the chosen dense coefficients rescaled to the same total.
    Both cases are flagged, as is a negative residual under the raw W.

    Args:
        coeffs: Dense coefficients ā
        support: Support points V, one row per coefficient
        budget: Maximum support size m (None = unlimited)
        spec: Kernel defining W
        context: Batch tree for mst_rbf

    Returns:
        (coeffs, support, achieved_eps, flags); achieved_eps is the
        feature-space distance between the dense and pruned centers,
        measured with the PSD projection when W is indefinite
    """
    coeffs = np.asarray(coeffs, dtype=float)
    support = np.atleast_2d(np.asarray(support, dtype=float))
    if budget is None or len(coeffs) <= budget:
        return coeffs, support, 0.0, []

    flags: List[str] = []
    w = symmetric_kernel_matrix(spec, support, context)
    scale = max(1.0, float(np.max(np.abs(np.diag(w)))))
    w_fit = w
    indefinite = False
    if not spec.is_psd:
        projected, min_eig = psd_projection(w)
        if min_eig < -INDEFINITE_RTOL * scale:
            indefinite = True
            w_fit = projected
            msg = (f"indefinite kernel matrix on {len(coeffs)} support points "
                   f"(min eigenvalue {min_eig:.3g}); pruning against its PSD projection")
            logger.warning(msg)
            flags.append(msg)
    target = w_fit @ coeffs

    residual_diag = np.diag(w_fit).copy()
    residual_corr = target.copy()
    factor = np.zeros((len(coeffs), budget))
    chosen: List[int] = []
    floor = PIVOT_TOL * scale

    for step in range(budget):
        usable = residual_diag > floor
        usable[chosen] = False
        if not np.any(usable):
            break
        gain = np.full(len(coeffs), -np.inf)
        gain[usable] = residual_corr[usable] ** 2 / residual_diag[usable]
        p = int(np.argmax(gain))

        pivot = math.sqrt(residual_diag[p])
        q = (w_fit[:, p] - factor[:, :step] @ factor[p, :step]) / pivot
        factor[:, step] = q
        residual_diag -= q ** 2
        residual_corr -= q * (residual_corr[p] / pivot)
        chosen.append(p)

    if not chosen:
        # every point is the zero vector in feature space
        return np.zeros(0), support[:0], math.sqrt(max(0.0, float(coeffs @ target))), flags

    chosen.sort()
    x = _refit(w_fit[np.ix_(chosen, chosen)], target[chosen], flags)

    mass = float(np.sum(np.abs(coeffs)))
    if indefinite and float(np.max(np.abs(x))) > mass:
        msg = (f"refit coefficients reach {float(np.max(np.abs(x))):.3g} > {mass:.3g}; "
               f"keeping the greedy subset with rescaled dense coefficients")
        logger.warning(msg)
        flags.append(msg)
        kept = coeffs[chosen]
        kept_total = float(kept.sum())
        x = kept * (float(coeffs.sum()) / kept_total) if abs(kept_total) > PIVOT_TOL else kept.copy()

    diff = coeffs.copy()
    diff[chosen] -= x
    raw = float(diff @ w @ diff)
    if raw < -INDEFINITE_RTOL * scale:
        msg = f"negative feature-space residual {raw:.3g} under the raw kernel"
        logger.warning(msg)
        flags.append(msg)
    eps = math.sqrt(max(0.0, float(diff @ w_fit @ diff)))
    return x, support[chosen], eps, flags


def advance_kernel_state(
    state: KernelStreamState,
    labels: np.ndarray,
    points: np.ndarray,
    spec: KernelSpec,
    cfg: DMeansConfig,
    context: Optional[EuclideanMST] = None,
    t: int = 0,
) -> Tuple[KernelStreamState, Dict[int, np.ndarray], List[str]]:
    """
    Fold one labeled batch into the sparse center state.

    Observed clusters get dense_center_update + sparse_reduce with
    w ← γ + n and Δt ← 1; unobserved ones age by one step. Clusters with
    Q·Δt > λ are deleted afterwards.

    Returns:
        (new state, input-space center proxy per active id, flags)
    """
    labels = np.asarray(labels)
    points = np.asarray(points, dtype=float)
    kept: List[SparseCenter] = []
    proxies: Dict[int, np.ndarray] = {}
    flags: List[str] = []

    def fold(cid: int, prior: Optional[SparseCenter], gamma: float) -> SparseCenter:
        members = points[labels == cid]
        dense, dense_support = dense_center_update(prior, gamma, members)
        proxies[cid] = dense @ dense_support
        reduced, reduced_support, eps, reduce_flags = sparse_reduce(
            dense, dense_support, cfg.budget, spec, context
        )
        flags.extend(f"t={t} cluster {cid}: {msg}" for msg in reduce_flags)
        return SparseCenter(
            id=cid,
            coeffs=reduced,
            support=reduced_support,
            weight=gamma + len(members),
            staleness=1,
            achieved_eps=eps,
        )

    active = {int(k) for k in np.unique(labels)}
    for center in state.centers:
        if center.id in active:
            kept.append(fold(center.id, center, gamma_of(center.weight, center.staleness, cfg.tau)))
        else:
            kept.append(replace(center, staleness=center.staleness + 1))

    old_ids = {c.id for c in state.centers}
    for cid in sorted(active - old_ids):
        kept.append(fold(cid, None, 0.0))

    survivors = tuple(c for c in kept if not cfg.q_penalty * c.staleness > cfg.lambda_)
    next_id = max([state.next_id] + [c.id + 1 for c in kept])
    return KernelStreamState(dim=state.dim, centers=survivors, next_id=next_id), proxies, flags
