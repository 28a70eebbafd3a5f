"""
DynoClust Core - Deterministic D-Means over one batch plus the stream fold.

This module implements exact D-Means coordinate descent for a single timestep
and the recursive update that carries cluster memory to the next timestep.

Principles:
- No I/O operations (all inputs passed as arguments)
- Deterministic (same inputs and seed → identical outputs)
- Pure functions (state is folded into a new value, never mutated)

Objective: J_t = Σ_{k∈A_t} [λ·1{Δt=0} + Q·Δt + γ‖θ−φ‖² + Σ_{i∈I_k}‖y_i − θ‖²]
where:
- γ = (w⁻¹ + τ·Δt)⁻¹ = confidence carried by an old cluster's center memory φ
- λ = new-cluster penalty
- Q = revival penalty per step of staleness
- τ = motion-variance rate (τ = ∞ forgets old centers immediately)
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Label returned by assign_point when opening a new cluster is cheapest
NEW = -1

CONVERGENCE_RTOL = 1e-12


class ParameterDomainError(ValueError):
    """Raised when λ, Q, τ, T_Q or k_τ fall outside their domain."""


class DimensionMismatchError(ValueError):
    """Raised when a batch and the stream state disagree on dimension."""


@dataclass(frozen=True)
class DMeansConfig:
    """
    Penalty parameters plus engine knobs shared by every clustering engine.

    `t_q`/`k_tau` are kept when the config was built by `from_reparam` so that
    outputs can report the triple the user actually supplied.
    """
    lambda_: float
    q_penalty: float
    tau: float
    restarts: int = 1
    max_iters: int = 100
    seed: int = 0
    budget: Optional[int] = 32
    eigensolver: str = "eigh"
    t_q: Optional[float] = None
    k_tau: Optional[float] = None

    def __post_init__(self):
        if not self.lambda_ > 0 or math.isinf(self.lambda_):
            raise ParameterDomainError(f"lambda must be finite and > 0, got {self.lambda_}")
        if not self.q_penalty >= 0 or math.isinf(self.q_penalty):
            raise ParameterDomainError(f"q_penalty must be finite and >= 0, got {self.q_penalty}")
        if not self.tau >= 0:
            raise ParameterDomainError(f"tau must be >= 0 (inf allowed), got {self.tau}")
        if self.restarts < 1:
            raise ParameterDomainError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iters < 1:
            raise ParameterDomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.budget is not None and self.budget < 1:
            raise ParameterDomainError(f"budget must be >= 1 or None, got {self.budget}")
        if self.eigensolver not in ("eigh", "jacobi"):
            raise ParameterDomainError(
                f"eigensolver must be 'eigh' or 'jacobi', got {self.eigensolver!r}"
            )


@dataclass(frozen=True)
class OldCluster:
    """Carried cluster memory: center φ, weight w, staleness Δt."""
    id: int
    phi: np.ndarray
    weight: float
    staleness: int


@dataclass(frozen=True)
class StreamState:
    """Fold state across timesteps."""
    dim: int
    old_clusters: Tuple[OldCluster, ...] = ()
    next_id: int = 0

    def __post_init__(self):
        ids = [oc.id for oc in self.old_clusters]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Duplicate old cluster ids: {ids}")
        if ids and max(ids) >= self.next_id:
            raise ValueError(f"next_id {self.next_id} must exceed every stored id {max(ids)}")
        for oc in self.old_clusters:
            if oc.weight <= 0 or oc.staleness < 1:
                raise ValueError(f"Old cluster {oc.id} has weight {oc.weight}, staleness {oc.staleness}")
            if np.asarray(oc.phi).shape != (self.dim,):
                raise DimensionMismatchError(
                    f"Old cluster {oc.id} center has shape {np.shape(oc.phi)}, expected ({self.dim},)"
                )

    @classmethod
    def empty(cls, dim: int) -> "StreamState":
        return cls(dim=dim)


@dataclass(frozen=True)
class Batch:
    """One timestep's data: N×d points plus optional stable point ids."""
    t: int
    points: np.ndarray
    point_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"Batch t={self.t} needs an N×d array with N >= 1, got shape {points.shape}")
        object.__setattr__(self, "points", points)
        if self.point_ids is not None:
            if len(self.point_ids) != points.shape[0]:
                raise ValueError(
                    f"Batch t={self.t}: {len(self.point_ids)} ids for {points.shape[0]} points"
                )
            object.__setattr__(self, "point_ids", tuple(self.point_ids))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass
class BatchResult:
    """
    Clustering of one batch.

    `centers` holds θ for every active cluster (input-space proxies for the
    kernel engines). `objective_trace` is the objective after every sweep of
    the winning restart.
    """
    labels: np.ndarray
    centers: Dict[int, np.ndarray]
    objective: float
    active_set: FrozenSet[int]
    iterations: int
    converged: bool = True
    objective_trace: Tuple[float, ...] = ()
    restart_index: int = 0
    next_id: int = 0
    counts: Dict[int, int] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    extras: Dict[str, float] = field(default_factory=dict)


def gamma_of(weight: float, staleness: int, tau: float) -> float:
    """
    Effective prior weight γ = (w⁻¹ + τ·Δt)⁻¹ of an old cluster.

    New clusters have no memory; callers use 0.0 for them directly.

    Args:
        weight: Carried weight w (> 0)
        staleness: Steps since last observation Δt (>= 0)
        tau: Motion-variance rate (may be +inf)

    Returns:
        γ; 0.0 when τ = +∞ and Δt > 0
    """
    if staleness == 0:
        return float(weight)
    if math.isinf(tau):
        return 0.0
    return 1.0 / (1.0 / weight + tau * staleness)


def from_reparam(lambda_: float, t_q: float, k_tau: float, **knobs) -> DMeansConfig:
    """
    Build a config from the (λ, T_Q, k_τ) reparameterization.

    T_Q is the number of steps after which an unobserved cluster is forgotten,
    k_τ the multiple of √λ within which a T_Q-stale cluster may still revive.

    Args:
        lambda_: New-cluster penalty λ
        t_q: Forgetting horizon T_Q (> 1)
        k_tau: Revival radius multiple k_τ (>= 1)
        **knobs: Engine knobs forwarded to DMeansConfig

    Returns:
        DMeansConfig with Q = λ/T_Q and τ = (T_Q(k_τ−1)+1)/(T_Q−1)

    Raises:
        ParameterDomainError: If t_q <= 1 or k_tau < 1
    """
    if not t_q > 1:
        raise ParameterDomainError(f"t_q must be > 1, got {t_q}")
    if not k_tau >= 1:
        raise ParameterDomainError(f"k_tau must be >= 1, got {k_tau}")
    q_penalty = lambda_ / t_q
    tau = (t_q * (k_tau - 1.0) + 1.0) / (t_q - 1.0)
    return DMeansConfig(lambda_=lambda_, q_penalty=q_penalty, tau=tau, t_q=t_q, k_tau=k_tau, **knobs)


def tune_lambda_config(lambda_: float, **knobs) -> DMeansConfig:
    """
    Config for tuning λ alone: Q = 0 and τ = ∞ make every batch independent.

    Once λ gives good single-batch clusterings, T_Q and k_τ are tuned with λ fixed.
    """
    return DMeansConfig(lambda_=lambda_, q_penalty=0.0, tau=math.inf, **knobs)


def shuffle_into_batches(points: np.ndarray, batch_size: int, seed: int = 0) -> List[Batch]:
    """
    Split one large dataset into random disjoint batches.

    Clustered with Q = 0 and τ = 0, the stream behaves like an any-time
    single-batch DP-Means: old clusters never fade and are never penalized.

    Args:
        points: N×d dataset
        batch_size: Points per batch (the last batch may be smaller)
        seed: Permutation seed

    Returns:
        List of Batch with t = 0, 1, ...; point ids are the original row indices
    """
    points = np.asarray(points, dtype=float)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = restart_rng(seed, 0, 0).permutation(points.shape[0])
    batches = []
    for t, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        batches.append(Batch(t=t, points=points[idx], point_ids=tuple(str(i) for i in idx)))
    return batches


def restart_rng(seed: int, t: int, restart: int) -> np.random.Generator:
    """PCG64 generator keyed on (seed, timestep, restart)."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, t, restart])


def _assign(
    y: np.ndarray,
    active_ids: np.ndarray,
    active_thetas: np.ndarray,
    old_ids: np.ndarray,
    old_phis: np.ndarray,
    old_gammas: np.ndarray,
    old_staleness: np.ndarray,
    cfg: DMeansConfig,
) -> Tuple[int, float]:
    # ids are sorted ascending, so argmin's first hit is the lowest id
    best_id, best_cost = NEW, math.inf
    if len(active_ids):
        costs = np.sum((active_thetas - y) ** 2, axis=1)
        j = int(np.argmin(costs))
        best_id, best_cost = int(active_ids[j]), float(costs[j])
    if len(old_ids):
        dist = np.sum((old_phis - y) ** 2, axis=1)
        costs = cfg.q_penalty * old_staleness + old_gammas / (old_gammas + 1.0) * dist
        j = int(np.argmin(costs))
        if costs[j] < best_cost:
            best_id, best_cost = int(old_ids[j]), float(costs[j])
    if cfg.lambda_ < best_cost:
        return NEW, cfg.lambda_
    return best_id, best_cost


def assign_point(
    y: np.ndarray,
    instantiated: Dict[int, Tuple[np.ndarray, int]],
    old: Dict[int, Tuple[np.ndarray, float, int]],
    cfg: DMeansConfig,
) -> Tuple[int, float]:
    """
    Cheapest label for one point.

    Args:
        y: Data vector
        instantiated: id → (θ, n) for clusters active in this batch
        old: id → (φ, γ, Δt) for old clusters not yet instantiated
        cfg: Penalty parameters

    Returns:
        (cluster id or NEW, cost). Equal costs prefer active, then old, then
        new; within a branch the lowest id wins.
    """
    y = np.asarray(y, dtype=float)
    a_ids = sorted(instantiated)
    o_ids = sorted(old)
    dim = y.shape[0]
    return _assign(
        y,
        np.array(a_ids, dtype=int),
        np.array([instantiated[k][0] for k in a_ids], dtype=float).reshape(-1, dim),
        np.array(o_ids, dtype=int),
        np.array([old[k][0] for k in o_ids], dtype=float).reshape(-1, dim),
        np.array([old[k][1] for k in o_ids], dtype=float),
        np.array([old[k][2] for k in o_ids], dtype=float),
        cfg,
    )


def update_center(phi: Optional[np.ndarray], gamma: float, assigned: np.ndarray) -> np.ndarray:
    """
    Weighted center θ = (γ·φ + Σy)/(γ + n).

    Raises:
        ValueError: If both γ = 0 and no points are assigned
    """
    assigned = np.asarray(assigned, dtype=float)
    n = assigned.shape[0] if assigned.size else 0
    if n == 0 and gamma == 0:
        raise ValueError("update_center needs gamma > 0 or at least one assigned point")
    total = assigned.sum(axis=0) if n else 0.0
    if gamma == 0:
        return total / n
    return (gamma * np.asarray(phi, dtype=float) + total) / (gamma + n)


def objective(
    batch: Batch,
    labels: Sequence[int],
    centers: Dict[int, np.ndarray],
    state: StreamState,
    cfg: DMeansConfig,
) -> float:
    """
    Evaluate J_t for a labeling.

    Labels that match an old cluster id are revivals; any other label is a
    new cluster (λ penalty, no memory).

    Raises:
        ValueError: If a label has no center
    """
    labels = np.asarray(labels)
    old_by_id = {oc.id: oc for oc in state.old_clusters}
    total = 0.0
    for cid in np.unique(labels):
        cid = int(cid)
        if cid not in centers:
            raise ValueError(f"Label {cid} has no center")
        theta = np.asarray(centers[cid], dtype=float)
        members = batch.points[labels == cid]
        total += float(np.sum((members - theta) ** 2))
        oc = old_by_id.get(cid)
        if oc is None:
            total += cfg.lambda_
        else:
            gamma = gamma_of(oc.weight, oc.staleness, cfg.tau)
            total += cfg.q_penalty * oc.staleness + gamma * float(np.sum((theta - oc.phi) ** 2))
    return total


@dataclass
class _Slot:
    """Mutable per-restart cluster bookkeeping."""
    phi: Optional[np.ndarray]
    gamma: float
    staleness: int
    theta: Optional[np.ndarray] = None
    n: int = 0
    sum_y: Optional[np.ndarray] = None


def _single_restart(
    batch: Batch,
    state: StreamState,
    cfg: DMeansConfig,
    order: np.ndarray,
) -> Tuple[np.ndarray, Dict[int, np.ndarray], List[float], bool, List[int]]:
    points = batch.points
    dim = batch.dim
    labels = np.full(batch.n_points, NEW, dtype=int)

    slots: Dict[int, _Slot] = {}
    for oc in state.old_clusters:
        slots[oc.id] = _Slot(
            phi=np.asarray(oc.phi, dtype=float),
            gamma=gamma_of(oc.weight, oc.staleness, cfg.tau),
            staleness=oc.staleness,
        )
    old_ids = {oc.id for oc in state.old_clusters}
    created: List[int] = []
    next_id = state.next_id

    trace: List[float] = []
    converged = False

    for _ in range(cfg.max_iters):
        for i in order:
            y = points[i]
            current = int(labels[i])
            vacated = None
            if current != NEW:
                # the point is scored with every other label fixed
                s = slots[current]
                s.n -= 1
                s.sum_y = s.sum_y - y
                if s.n == 0:
                    vacated = current
                    if current in old_ids:
                        s.theta, s.sum_y = None, None
                    else:
                        del slots[current]

            active = sorted(k for k, s in slots.items() if s.n > 0)
            dormant = sorted(k for k, s in slots.items() if s.n == 0)
            target, _ = _assign(
                y,
                np.array(active, dtype=int),
                np.array([slots[k].theta for k in active], dtype=float).reshape(-1, dim),
                np.array(dormant, dtype=int),
                np.array([slots[k].phi for k in dormant], dtype=float).reshape(-1, dim),
                np.array([slots[k].gamma for k in dormant], dtype=float),
                np.array([slots[k].staleness for k in dormant], dtype=float),
                cfg,
            )

            if target == NEW:
                if vacated is not None and vacated not in old_ids:
                    target = vacated
                else:
                    target = next_id
                    next_id += 1
                    created.append(target)
                slots[target] = _Slot(phi=None, gamma=0.0, staleness=0, theta=y.copy(), n=0,
                                      sum_y=np.zeros(dim))
            elif slots[target].n == 0:
                s = slots[target]
                s.theta = (s.gamma * s.phi + y) / (s.gamma + 1.0)
                s.sum_y = np.zeros(dim)

            s = slots[target]
            s.n += 1
            s.sum_y = s.sum_y + y
            labels[i] = target

        centers = {}
        for k, s in slots.items():
            if s.n > 0:
                s.theta = update_center(s.phi, s.gamma, points[labels == k])
                centers[k] = s.theta

        j_val = objective(batch, labels, centers, state, cfg)
        if trace and abs(j_val - trace[-1]) <= CONVERGENCE_RTOL * max(1.0, abs(trace[-1])):
            trace.append(j_val)
            converged = True
            break
        trace.append(j_val)

    surviving_new = [k for k in created if k in slots and slots[k].n > 0]
    return labels, centers, trace, converged, surviving_new


def _renumber(
    labels: np.ndarray,
    centers: Dict[int, np.ndarray],
    surviving_new: List[int],
    first_id: int,
) -> Tuple[np.ndarray, Dict[int, np.ndarray], int]:
    mapping = {old: first_id + rank for rank, old in enumerate(surviving_new)}
    new_labels = np.array([mapping.get(int(l), int(l)) for l in labels], dtype=int)
    new_centers = {mapping.get(k, k): v for k, v in centers.items()}
    return new_labels, new_centers, first_id + len(surviving_new)


def cluster_batch(batch: Batch, state: StreamState, cfg: DMeansConfig) -> BatchResult:
    """
    Cluster one batch with D-Means coordinate descent.

    Each restart alternates a full label pass with a center update until J_t
    stops changing or max_iters sweeps are done. Restart 0 visits points in
    batch order; later restarts use a seeded permutation. The lowest J_t wins.

    Args:
        batch: Data for timestep t
        state: Old clusters carried from previous timesteps
        cfg: Penalties and engine knobs

    Returns:
        BatchResult; new clusters get consecutive ids from state.next_id in
        creation order

    Raises:
        DimensionMismatchError: If batch.dim != state.dim
    """
    if batch.dim != state.dim:
        raise DimensionMismatchError(f"Batch t={batch.t} has dim {batch.dim}, state has dim {state.dim}")

    best = None
    for r in range(cfg.restarts):
        order = np.arange(batch.n_points) if r == 0 else restart_rng(cfg.seed, batch.t, r).permutation(batch.n_points)
        labels, centers, trace, converged, surviving_new = _single_restart(batch, state, cfg, order)
        logger.debug(f"t={batch.t} restart {r}: J={trace[-1]:.6g} after {len(trace)} sweeps")
        if best is None or trace[-1] < best[2][-1]:
            best = (labels, centers, trace, converged, surviving_new, r)

    labels, centers, trace, converged, surviving_new, r = best
    labels, centers, next_id = _renumber(labels, centers, surviving_new, state.next_id)

    flags = []
    if not converged:
        flags.append("max_iters_reached")
        logger.warning(f"t={batch.t}: D-Means hit max_iters={cfg.max_iters} without converging")

    ids, counts = np.unique(labels, return_counts=True)
    return BatchResult(
        labels=labels,
        centers=centers,
        objective=trace[-1],
        active_set=frozenset(int(k) for k in ids),
        iterations=len(trace),
        converged=converged,
        objective_trace=tuple(trace),
        restart_index=r,
        next_id=next_id,
        counts={int(k): int(c) for k, c in zip(ids, counts)},
        flags=flags,
    )


def advance_state(
    state: StreamState,
    batch_result: BatchResult,
    batch: Batch,
    cfg: DMeansConfig,
) -> StreamState:
    """
    Fold one batch's clustering into the carried state.

    Observed clusters: φ ← (γφ + Σy)/(γ + n), w ← γ + n, Δt ← 1.
    Unobserved clusters: Δt ← Δt + 1. Then clusters with Q·Δt > λ are deleted.

    Returns:
        New StreamState (input state is untouched)
    """
    labels = np.asarray(batch_result.labels)
    kept: List[OldCluster] = []

    for oc in state.old_clusters:
        members = batch.points[labels == oc.id]
        if len(members):
            gamma = gamma_of(oc.weight, oc.staleness, cfg.tau)
            kept.append(OldCluster(
                id=oc.id,
                phi=update_center(oc.phi, gamma, members),
                weight=gamma + len(members),
                staleness=1,
            ))
        else:
            kept.append(replace(oc, staleness=oc.staleness + 1))

    old_ids = {oc.id for oc in state.old_clusters}
    for cid in sorted(batch_result.active_set - old_ids):
        members = batch.points[labels == cid]
        kept.append(OldCluster(id=cid, phi=update_center(None, 0.0, members),
                               weight=float(len(members)), staleness=1))

    survivors = tuple(oc for oc in kept if not cfg.q_penalty * oc.staleness > cfg.lambda_)
    dropped = len(kept) - len(survivors)
    if dropped:
        logger.debug(f"t={batch.t}: deleted {dropped} clusters past the revival horizon")

    next_id = max(state.next_id, batch_result.next_id)
    return StreamState(dim=state.dim, old_clusters=survivors, next_id=next_id)
