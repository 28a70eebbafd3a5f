"""
Cluster Matching - link the clusters found in a batch to old clusters.

A temporary cluster l either becomes new (penalty λ) or revives old cluster k
(penalty Q·Δt_k plus the cost of pulling k's memory onto the cluster's data).
The difference between the two is

    cost_lk = Q·Δt_k − λ + γ_k·ζ_lk/(γ_k + n_l)
    ζ_lk    = n_l·K^ΦΦ_kk − 2·Σ_{i∈I_l} K^YΦ_ik + (1/n_l)·Σ_{i,j∈I_l} K^YY_ij

and the best linking is a minimum-cost matching in which every temporary
cluster may stay unmatched at cost 0. The constraint matrix is totally
unimodular, so the assignment solver's integral answer is the LP optimum.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from dynoclust.core import NEW, DMeansConfig, gamma_of
from dynoclust.kernels import GramTables
from dynoclust.sparse_centers import KernelStreamState

logger = logging.getLogger(__name__)


@dataclass
class MatchProblem:
    """Revival-minus-new costs for |A| temporary clusters against K old ones."""
    costs: np.ndarray
    zeta: np.ndarray
    sizes: np.ndarray
    old_ids: List[int] = field(default_factory=list)


@dataclass
class MatchResult:
    """Old id (or NEW) for each temporary cluster, plus the matching value."""
    assignment: Dict[int, int]
    value: float


def build_match_costs(
    partition: Sequence[np.ndarray],
    state: KernelStreamState,
    gram: GramTables,
    cfg: DMeansConfig,
) -> MatchProblem:
    """
    Cost table for linking temporary clusters to old clusters.

    Args:
        partition: Point indices of each nonempty temporary cluster
        state: Old sparse centers (gram columns follow state.centers order)
        gram: Kernel tables for the batch
        cfg: Penalty parameters

    Returns:
        MatchProblem of shape |A|×K
    """
    n_temp, n_old = len(partition), len(state.centers)
    sizes = np.array([len(idx) for idx in partition], dtype=int)
    zeta = np.zeros((n_temp, n_old))
    costs = np.zeros((n_temp, n_old))
    if n_old == 0:
        return MatchProblem(costs=costs, zeta=zeta, sizes=sizes, old_ids=[])

    gammas = np.array([gamma_of(c.weight, c.staleness, cfg.tau) for c in state.centers])
    revive = cfg.q_penalty * np.array([c.staleness for c in state.centers], dtype=float)

    for l, idx in enumerate(partition):
        n_l = len(idx)
        self_sim = float(gram.k_yy[np.ix_(idx, idx)].sum()) / n_l
        cross = gram.k_yphi[idx].sum(axis=0)
        zeta[l] = n_l * gram.k_phiphi_diag - 2.0 * cross + self_sim
        costs[l] = revive - cfg.lambda_ + gammas * zeta[l] / (gammas + n_l)

    return MatchProblem(costs=costs, zeta=zeta, sizes=sizes, old_ids=[c.id for c in state.centers])


def solve_matching(problem: MatchProblem) -> MatchResult:
    """
    Exact minimum-cost linking of temporary clusters to old clusters.

    The |A|×K cost table is padded to a square with zero-cost dummies (an
    unmatched temporary cluster is new, an unmatched old cluster stays
    dormant) and solved with the Hungarian method. Pairs with nonnegative
    cost are left unmatched since linking them gains nothing.

    Returns:
        MatchResult with assignment l → old id or NEW
    """
    n_temp, n_old = problem.costs.shape
    assignment = {l: NEW for l in range(n_temp)}
    if n_temp == 0 or n_old == 0:
        return MatchResult(assignment=assignment, value=0.0)

    if not np.all(np.isfinite(problem.costs)):
        raise ValueError("Match costs must be finite")

    size = n_temp + n_old
    padded = np.zeros((size, size))
    padded[:n_temp, :n_old] = problem.costs

    rows, cols = linear_sum_assignment(padded)
    value = 0.0
    for l, k in zip(rows, cols):
        if l < n_temp and k < n_old and problem.costs[l, k] < 0:
            assignment[int(l)] = problem.old_ids[k]
            value += float(problem.costs[l, k])

    linked = sum(1 for v in assignment.values() if v != NEW)
    logger.debug(f"Matched {linked} of {n_temp} temporary clusters to {n_old} old clusters")
    return MatchResult(assignment=assignment, value=value)
