"""
Kernels - linear, RBF and MST-path RBF similarity functions plus Gram tables.

The MST-path kernel measures distance along the minimum Euclidean spanning
tree of the current batch, counting only edges longer than ω:

    d(x, y) = Σ_{e ∈ path(x, y), |e| > ω} |e|,    κ(x, y) = exp(−d²/(2ω²))

Points inside one ring are chained by short edges (d = 0); crossing the gap
between rings costs the gap length.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from dynoclust.core import ParameterDomainError

logger = logging.getLogger(__name__)

KERNEL_TYPES = ("linear", "rbf", "mst_rbf")


class MissingContextError(ValueError):
    """Raised when the MST-path kernel is evaluated without a batch tree."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice; `omega` is the bandwidth for rbf and mst_rbf."""
    kind: str = "linear"
    omega: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNEL_TYPES:
            raise ParameterDomainError(f"kernel type must be one of {KERNEL_TYPES}, got {self.kind!r}")
        if self.kind != "linear" and not (self.omega is not None and self.omega > 0):
            raise ParameterDomainError(f"{self.kind} kernel needs omega > 0, got {self.omega}")

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(kind=data["type"], omega=data.get("omega"))

    def to_dict(self) -> dict:
        out = {"type": self.kind}
        if self.omega is not None:
            out["omega"] = self.omega
        return out

    @property
    def needs_tree(self) -> bool:
        return self.kind == "mst_rbf"

    @property
    def is_psd(self) -> bool:
        """False for mst_rbf, whose Gram matrices can have negative eigenvalues."""
        return self.kind != "mst_rbf"


@dataclass
class EuclideanMST:
    """
    Minimum spanning tree of one batch with path-distance queries.

    Attributes:
        points: N×d tree nodes
        parent: parent[v] in the tree rooted at node 0 (-1 for the root)
        parent_length: length of the edge v–parent[v]
        depth: depth of each node below the root
        edges: (u, v, length) in insertion order
        exceed_dist: N×N sums of path edge lengths strictly above `omega`
    """
    points: np.ndarray
    parent: np.ndarray
    parent_length: np.ndarray
    depth: np.ndarray
    edges: List[tuple]
    omega: float
    exceed_dist: np.ndarray

    @property
    def total_weight(self) -> float:
        return float(sum(length for _, _, length in self.edges))

    def path_lengths(self, i: int, j: int) -> List[float]:
        """Edge lengths along the unique tree path from node i to node j."""
        up_i, up_j = [], []
        while self.depth[i] > self.depth[j]:
            up_i.append(float(self.parent_length[i]))
            i = self.parent[i]
        while self.depth[j] > self.depth[i]:
            up_j.append(float(self.parent_length[j]))
            j = self.parent[j]
        while i != j:
            up_i.append(float(self.parent_length[i]))
            up_j.append(float(self.parent_length[j]))
            i, j = self.parent[i], self.parent[j]
        return up_i + up_j[::-1]

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Exceeding-edge path distances between two point sets.

        Points that are not tree nodes (old support points) hang off their
        nearest node; the hanging edge counts if it is longer than ω.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        nx, ax = self._attach(x)
        ny, ay = self._attach(y)
        return ax[:, None] + ay[None, :] + self.exceed_dist[np.ix_(nx, ny)]

    def _attach(self, x: np.ndarray):
        d = cdist(x, self.points)
        nearest = np.argmin(d, axis=1)
        length = d[np.arange(len(x)), nearest]
        return nearest, np.where(length > self.omega, length, 0.0)


def euclidean_mst(points: np.ndarray, omega: float = 0.0) -> EuclideanMST:
    """
    Prim's algorithm on the complete Euclidean graph of a batch.

    Path distances (edges longer than `omega`) are accumulated as each node
    joins the tree, so every pair is available without further traversal.

    Args:
        points: N×d array, N >= 1
        omega: Edge-length threshold for the exceeding-path distance

    Returns:
        EuclideanMST with N−1 edges
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < 1:
        raise ValueError("euclidean_mst needs at least one point")

    dist = cdist(points, points)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    best_from = np.zeros(n, dtype=int)

    parent = np.full(n, -1, dtype=int)
    parent_length = np.zeros(n)
    depth = np.zeros(n, dtype=int)
    exceed = np.zeros((n, n))
    edges = []

    for _ in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        v = int(np.argmin(candidates))
        p = int(best_from[v])
        length = float(best[v])

        step = length if length > omega else 0.0
        exceed[v, in_tree] = exceed[p, in_tree] + step
        exceed[in_tree, v] = exceed[v, in_tree]

        parent[v], parent_length[v], depth[v] = p, length, depth[p] + 1
        edges.append((p, v, length))
        in_tree[v] = True

        closer = dist[v] < best
        best[closer] = dist[v][closer]
        best_from[closer] = v

    return EuclideanMST(
        points=points,
        parent=parent,
        parent_length=parent_length,
        depth=depth,
        edges=edges,
        omega=omega,
        exceed_dist=exceed,
    )


def kernel_matrix(
    spec: KernelSpec,
    x: np.ndarray,
    y: np.ndarray,
    context: Optional[EuclideanMST] = None,
) -> np.ndarray:
    """
    Kernel values κ(x_i, y_j) for two point sets.

    Raises:
        MissingContextError: If spec is mst_rbf and no tree is given
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if spec.kind == "linear":
        return x @ y.T
    if spec.kind == "rbf":
        return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * spec.omega ** 2))
    if context is None:
        raise MissingContextError("mst_rbf kernel requires the batch MST context")
    d = context.distance(x, y)
    return np.exp(-(d ** 2) / (2.0 * spec.omega ** 2))


def kernel_eval(
    spec: KernelSpec,
    x: np.ndarray,
    y: np.ndarray,
    context: Optional[EuclideanMST] = None,
) -> float:
    """Single kernel value κ(x, y)."""
    return float(kernel_matrix(spec, x, y, context)[0, 0])


def symmetric_kernel_matrix(
    spec: KernelSpec,
    x: np.ndarray,
    context: Optional[EuclideanMST] = None,
) -> np.ndarray:
    """κ(x_i, x_j) with the lower triangle mirrored from the upper one."""
    k = kernel_matrix(spec, x, x, context)
    return np.triu(k) + np.triu(k, 1).T


def batch_context(spec: KernelSpec, points: np.ndarray) -> Optional[EuclideanMST]:
    """Tree context for `points` when the kernel needs one."""
    if spec.needs_tree:
        return euclidean_mst(points, spec.omega)
    return None


@dataclass
class GramTables:
    """
    Kernel tables for one batch against K old centers.

    k_yy[i, j] = κ(y_i, y_j); k_yphi[i, k] = Σ_j a_kj κ(y_i, v_kj);
    k_phiphi_diag[k] = Σ_ij a_ki a_kj κ(v_ki, v_kj).
    """
    k_yy: np.ndarray
    k_yphi: np.ndarray
    k_phiphi_diag: np.ndarray
    flags: List[str] = field(default_factory=list)

    @property
    def n_data(self) -> int:
        return self.k_yy.shape[0]

    @property
    def n_old(self) -> int:
        return self.k_phiphi_diag.shape[0]


def build_gram_tables(
    points: np.ndarray,
    centers: Sequence,
    spec: KernelSpec,
    context: Optional[EuclideanMST] = None,
) -> GramTables:
    """
    Build K^YY, K^YΦ and diag(K^ΦΦ) for a batch and sparse old centers.

    Args:
        points: N×d batch
        centers: Objects with `coeffs` (m,) and `support` (m×d) attributes
        spec: Kernel
        context: Batch tree for mst_rbf

    Returns:
        GramTables; negative K^ΦΦ diagonals (non-PSD kernels) are clamped
        to 0 and flagged
    """
    points = np.asarray(points, dtype=float)
    k_yy = symmetric_kernel_matrix(spec, points, context)
    k_yphi = np.zeros((points.shape[0], len(centers)))
    k_phiphi = np.zeros(len(centers))
    flags = []

    for k, center in enumerate(centers):
        coeffs = np.asarray(center.coeffs, dtype=float)
        if coeffs.size == 0:
            continue
        k_yphi[:, k] = kernel_matrix(spec, points, center.support, context) @ coeffs
        w = symmetric_kernel_matrix(spec, center.support, context)
        k_phiphi[k] = float(coeffs @ w @ coeffs)

    negative = k_phiphi < 0
    if np.any(negative):
        msg = f"clamped {int(negative.sum())} negative K_PhiPhi diagonal(s) to 0 (min {k_phiphi.min():.3g})"
        logger.warning(msg)
        flags.append(msg)
        k_phiphi[negative] = 0.0

    return GramTables(k_yy=k_yy, k_yphi=k_yphi, k_phiphi_diag=k_phiphi, flags=flags)
