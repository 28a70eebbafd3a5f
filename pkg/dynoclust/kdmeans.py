"""
KD-Means - kernelized D-Means coordinate descent over one batch.

Centers are never formed explicitly. With A = γ + n, the cost of a cluster
reduces to kernel sums:

    J_k = λ·1{new} + Q·Δt + γ·n·K^ΦΦ_kk/A − Σ_{i∈I_k}(2γK^YΦ_ik + Σ_{j∈I_k}K^YY_ij)/A

and the label update compares the exact marginal cost of adding point i to
each active cluster, reviving a dormant old cluster, or opening a new one.
Per-cluster aggregates (n, ΣΣK^YY, ΣK^YΦ and per-point row sums) are updated
incrementally as points move.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from dynoclust.core import (
    CONVERGENCE_RTOL,
    NEW,
    Batch,
    BatchResult,
    DimensionMismatchError,
    DMeansConfig,
    gamma_of,
    restart_rng,
)
from dynoclust.kernels import EuclideanMST, GramTables, KernelSpec, batch_context, build_gram_tables
from dynoclust.sparse_centers import KernelStreamState, advance_kernel_state

logger = logging.getLogger(__name__)

PENALTY_VARIANTS = ("exact", "modified")


def kd_objective(
    labels: np.ndarray,
    state: KernelStreamState,
    gram: GramTables,
    cfg: DMeansConfig,
    penalty: str = "exact",
) -> float:
    """
    Kernelized D-Means cost of a labeling.

    Args:
        labels: Cluster id per point; ids of state centers are revivals
        state: Old sparse centers (gram columns follow state.centers order)
        gram: Kernel tables for the batch against state.centers
        cfg: Penalty parameters
        penalty: "exact" charges Q·Δt per revived cluster; "modified" charges
                 n/(γ+n)·Q·Δt, the form the spectral relaxation optimizes

    Returns:
        Objective value
    """
    if penalty not in PENALTY_VARIANTS:
        raise ValueError(f"penalty must be one of {PENALTY_VARIANTS}, got {penalty!r}")
    labels = np.asarray(labels)
    column = {c.id: k for k, c in enumerate(state.centers)}
    total = float(np.trace(gram.k_yy))

    for cid in np.unique(labels):
        idx = np.flatnonzero(labels == cid)
        n = len(idx)
        block = float(gram.k_yy[np.ix_(idx, idx)].sum())
        k = column.get(int(cid))
        if k is None:
            total += cfg.lambda_ - block / n
            continue
        center = state.centers[k]
        gamma = gamma_of(center.weight, center.staleness, cfg.tau)
        revive = cfg.q_penalty * center.staleness
        if penalty == "modified":
            revive *= n / (gamma + n)
        cross = float(gram.k_yphi[idx, k].sum())
        total += (
            revive
            + gamma * n * gram.k_phiphi_diag[k] / (gamma + n)
            - (2.0 * gamma * cross + block) / (gamma + n)
        )
    return total


class ClusterStats:
    """
    Incremental per-cluster aggregates for one KD-Means restart.

    Slots 0..K−1 hold the old clusters (dormant while empty); later slots hold
    clusters opened in this batch and are recycled once they empty out.
    """

    def __init__(self, state: KernelStreamState, gram: GramTables, cfg: DMeansConfig):
        n_old = len(state.centers)
        n_data = gram.n_data
        cap = n_old + n_data

        self.gram = gram
        self.cfg = cfg
        self.cap = cap
        self.n_old = n_old

        self.slot_id = np.full(cap, -1, dtype=int)
        self.slot_id[:n_old] = [c.id for c in state.centers]
        self.in_use = np.zeros(cap, dtype=bool)
        self.in_use[:n_old] = True
        self.is_old = np.zeros(cap, dtype=bool)
        self.is_old[:n_old] = True

        self.gamma = np.zeros(cap)
        self.gamma[:n_old] = [gamma_of(c.weight, c.staleness, cfg.tau) for c in state.centers]
        self.staleness = np.zeros(cap)
        self.staleness[:n_old] = [c.staleness for c in state.centers]
        self.phiphi = np.zeros(cap)
        self.phiphi[:n_old] = gram.k_phiphi_diag

        # K^YΦ with a zero column for clusters that have no memory
        self.col = np.full(cap, n_old, dtype=int)
        self.col[:n_old] = np.arange(n_old)
        self.k_yphi = np.hstack([gram.k_yphi, np.zeros((n_data, 1))])

        self.n = np.zeros(cap, dtype=int)
        self.sum_kyy = np.zeros(cap)
        self.sum_yphi = np.zeros(cap)
        self.rows = np.zeros((n_data, cap))  # rows[i, s] = Σ_{j∈I_s} K^YY_ij

        self.labels = np.full(n_data, -1, dtype=int)
        self.next_id = state.next_id
        self.created: List[int] = []

    def open_new(self) -> int:
        s = int(np.flatnonzero(~self.in_use)[0])
        self.in_use[s] = True
        self.slot_id[s] = self.next_id
        self.created.append(self.next_id)
        self.next_id += 1
        return s

    def add(self, i: int, s: int) -> None:
        k_ii = self.gram.k_yy[i, i]
        self.sum_kyy[s] += 2.0 * self.rows[i, s] + k_ii
        self.sum_yphi[s] += self.k_yphi[i, self.col[s]]
        self.n[s] += 1
        self.rows[:, s] += self.gram.k_yy[:, i]
        self.labels[i] = s

    def deassign(self, i: int) -> None:
        s = int(self.labels[i])
        if s < 0:
            return
        self.labels[i] = -1
        self.rows[:, s] -= self.gram.k_yy[:, i]
        self.n[s] -= 1
        if self.n[s] == 0:
            self.sum_kyy[s] = 0.0
            self.sum_yphi[s] = 0.0
            self.rows[:, s] = 0.0
            if not self.is_old[s]:
                self.in_use[s] = False
            return
        self.sum_kyy[s] -= 2.0 * self.rows[i, s] + self.gram.k_yy[i, i]
        self.sum_yphi[s] -= self.k_yphi[i, self.col[s]]

    def branch_costs(self, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Active and revival costs for points `idx` (assumed unassigned).

        Returns:
            (active, dormant) arrays of shape len(idx)×cap, +inf where the
            branch does not apply to a slot
        """
        cfg = self.cfg
        k_ii = self.gram.k_yy[idx, idx][:, None]
        kyphi = self.k_yphi[idx][:, self.col]

        active_mask = self.n > 0
        a = self.gamma + self.n
        a_safe = np.where(active_mask, a, 1.0)
        p = 2.0 * self.gamma * self.sum_yphi + self.sum_kyy
        active = (
            a_safe * k_ii / (a_safe + 1.0)
            - 2.0 * (self.gamma * kyphi + self.rows[idx]) / (a_safe + 1.0)
            + (self.gamma ** 2 * self.phiphi + p) / (a_safe * (a_safe + 1.0))
        )
        active = np.where(active_mask, active, np.inf)

        dormant_mask = self.is_old & (self.n == 0)
        dormant = (
            cfg.q_penalty * self.staleness
            + self.gamma / (self.gamma + 1.0) * (self.phiphi - 2.0 * kyphi + k_ii)
        )
        dormant = np.where(dormant_mask, dormant, np.inf)
        return active, dormant

    def _lowest_id_argmin(self, costs: np.ndarray) -> Tuple[int, float]:
        best = costs.min()
        if not np.isfinite(best):
            return -1, math.inf
        ties = np.flatnonzero(costs == best)
        s = int(ties[np.argmin(self.slot_id[ties])])
        return s, float(best)

    def choose(self, i: int) -> Tuple[int, float]:
        """Best slot for point i (-1 for a new cluster) and its cost."""
        active, dormant = self.branch_costs(np.array([i]))
        s, cost = self._lowest_id_argmin(active[0])
        s_old, cost_old = self._lowest_id_argmin(dormant[0])
        if cost_old < cost:
            s, cost = s_old, cost_old
        if self.cfg.lambda_ < cost:
            return -1, self.cfg.lambda_
        return s, cost

    def ids(self) -> np.ndarray:
        return self.slot_id[self.labels]


def kd_assign(i: int, stats: ClusterStats) -> Tuple[int, float]:
    """
    Cheapest label for point i, which must already be deassigned.

    Branches: exact marginal cost of joining an active cluster; Q·Δt +
    γ/(γ+1)(K^ΦΦ_kk − 2K^YΦ_ik + K_ii) to revive a dormant old cluster; λ
    for a new cluster. Ties prefer active, then old, then new, then the
    lowest id. Gram tables and penalties come from `stats`.

    Returns:
        (cluster id or NEW, cost)
    """
    s, cost = stats.choose(i)
    if s < 0:
        return NEW, cost
    return int(stats.slot_id[s]), cost


def _nearest_first_pass(stats: ClusterStats) -> None:
    unassigned = np.ones(stats.gram.n_data, dtype=bool)
    while np.any(unassigned):
        idx = np.flatnonzero(unassigned)
        active, dormant = stats.branch_costs(idx)
        best = np.minimum(active.min(axis=1), dormant.min(axis=1))
        i = int(idx[np.argmin(best)])
        s, _ = stats.choose(i)
        if s < 0:
            s = stats.open_new()
        stats.add(i, s)
        unassigned[i] = False


def _single_restart(
    state: KernelStreamState,
    gram: GramTables,
    cfg: DMeansConfig,
    order: np.ndarray,
) -> Tuple[np.ndarray, List[float], bool, List[int]]:
    stats = ClusterStats(state, gram, cfg)
    _nearest_first_pass(stats)
    trace = [kd_objective(stats.ids(), state, gram, cfg)]
    converged = False

    while len(trace) < cfg.max_iters:
        for i in order:
            i = int(i)
            stats.deassign(i)
            s, _ = stats.choose(i)
            if s < 0:
                s = stats.open_new()
            stats.add(i, s)
        j_val = kd_objective(stats.ids(), state, gram, cfg)
        done = abs(j_val - trace[-1]) <= CONVERGENCE_RTOL * max(1.0, abs(trace[-1]))
        trace.append(j_val)
        if done:
            converged = True
            break

    labels = stats.ids()
    present = set(labels.tolist())
    surviving_new = [cid for cid in stats.created if cid in present]
    return labels, trace, converged, surviving_new


def relabel_new_clusters(labels: np.ndarray, surviving_new: List[int], first_id: int) -> Tuple[np.ndarray, int]:
    """Give surviving new clusters consecutive ids from `first_id` in creation order."""
    mapping = {old: first_id + rank for rank, old in enumerate(surviving_new)}
    relabeled = np.array([mapping.get(int(l), int(l)) for l in labels], dtype=int)
    return relabeled, first_id + len(surviving_new)


def finish_kernel_batch(
    batch: Batch,
    state: KernelStreamState,
    labels: np.ndarray,
    spec: KernelSpec,
    cfg: DMeansConfig,
    context: Optional[EuclideanMST],
    next_id: int,
) -> Tuple[Dict[int, np.ndarray], Dict[int, int], KernelStreamState, List[str]]:
    """Fold a final labeling into the sparse state; shared by KD-Means and SD-Means."""
    new_state, proxies, flags = advance_kernel_state(
        state, labels, batch.points, spec, cfg, context=context, t=batch.t
    )
    new_state = KernelStreamState(
        dim=new_state.dim, centers=new_state.centers, next_id=max(new_state.next_id, next_id)
    )
    ids, counts = np.unique(labels, return_counts=True)
    return proxies, {int(k): int(c) for k, c in zip(ids, counts)}, new_state, flags


def kd_cluster_batch(
    batch: Batch,
    state: KernelStreamState,
    spec: KernelSpec,
    cfg: DMeansConfig,
) -> Tuple[BatchResult, KernelStreamState]:
    """
    Cluster one batch with KD-Means and fold the result into the sparse state.

    The first pass labels points nearest-first: the unassigned point with the
    cheapest existing cluster goes next (lowest index on ties, point 0 when no
    cluster exists). Later sweeps visit points in index order, or a seeded
    permutation on restarts >= 1, until the objective stops changing.

    Args:
        batch: Data for timestep t
        state: Sparse old centers
        spec: Kernel
        cfg: Penalties and engine knobs (budget = max support per center)

    Returns:
        (BatchResult with input-space center proxies, next KernelStreamState)

    Raises:
        DimensionMismatchError: If batch.dim != state.dim
    """
    if batch.dim != state.dim:
        raise DimensionMismatchError(f"Batch t={batch.t} has dim {batch.dim}, state has dim {state.dim}")

    context = batch_context(spec, batch.points)
    gram = build_gram_tables(batch.points, state.centers, spec, context)

    best = None
    for r in range(cfg.restarts):
        order = np.arange(batch.n_points) if r == 0 else restart_rng(cfg.seed, batch.t, r).permutation(batch.n_points)
        labels, trace, converged, surviving_new = _single_restart(state, gram, cfg, order)
        logger.debug(f"t={batch.t} restart {r}: kernel J={trace[-1]:.6g} after {len(trace)} sweeps")
        if best is None or trace[-1] < best[1][-1]:
            best = (labels, trace, converged, surviving_new, r)

    labels, trace, converged, surviving_new, r = best
    labels, next_id = relabel_new_clusters(labels, surviving_new, state.next_id)

    flags = list(gram.flags)
    if not converged:
        flags.append("max_iters_reached")
        logger.warning(f"t={batch.t}: KD-Means hit max_iters={cfg.max_iters} without converging")

    proxies, counts, new_state, fold_flags = finish_kernel_batch(
        batch, state, labels, spec, cfg, context, next_id
    )
    flags.extend(fold_flags)

    result = BatchResult(
        labels=labels,
        centers=proxies,
        objective=trace[-1],
        active_set=frozenset(counts),
        iterations=len(trace),
        converged=converged,
        objective_trace=tuple(trace),
        restart_index=r,
        next_id=next_id,
        counts=counts,
        flags=flags,
        extras={"max_achieved_eps": max((c.achieved_eps for c in new_state.centers), default=0.0)},
    )
    return result, new_state
