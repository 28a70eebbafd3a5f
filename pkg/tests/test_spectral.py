"""
Unit tests for Spectral Dynamic Means.

Tests validate:
- Jacobi eigensolver against LAPACK
- Similarity matrix assembly and the relaxed lower bound
- Rotation seeding, Procrustes refinement and rounding
- End-to-end batches and tracking
"""

import numpy as np
import pytest

from dynoclust.core import Batch, DimensionMismatchError, DMeansConfig
from dynoclust.kdmeans import kd_objective
from dynoclust.kernels import KernelSpec, build_gram_tables
from dynoclust.sparse_centers import KernelStreamState, SparseCenter
from dynoclust.spectral import (
    EigenSolverError,
    SimilarityBlock,
    _partition,
    build_G,
    init_U,
    jacobi_eigh,
    normalize_rows,
    refine_U,
    relax,
    relaxed_bound,
    select_V,
    solve_feasible,
    sdmeans_batch,
    sym_eigendecomp,
)


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n))
    return 0.5 * (a + a.T)


def random_kernel_state(rng: np.random.Generator, n_old: int) -> KernelStreamState:
    return KernelStreamState(
        dim=2,
        centers=tuple(
            SparseCenter(id=k, coeffs=np.array([0.5, 0.5]), support=rng.uniform(0.0, 1.0, size=(2, 2)),
                         weight=float(rng.uniform(1.0, 10.0)), staleness=int(rng.integers(1, 4)))
            for k in range(n_old)
        ),
        next_id=n_old,
    )


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


class TestEigensolvers:
    """Tests for jacobi_eigh and sym_eigendecomp."""

    def test_jacobi_matches_eigh(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 5, 12):
            a = random_symmetric(rng, n)
            vals, vecs = sym_eigendecomp(a, "jacobi")
            ref_vals, _ = sym_eigendecomp(a, "eigh")
            np.testing.assert_allclose(vals, ref_vals, atol=1e-8)
            assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - a) <= 1e-7 * max(1.0, np.linalg.norm(a))
            np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-9)

    def test_descending_order(self):
        vals, vecs = sym_eigendecomp(np.diag([1.0, 3.0, 2.0]))
        np.testing.assert_array_equal(vals, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(vecs[:, 0]), [0.0, 1.0, 0.0])

    def test_jacobi_failure_reports_residual(self):
        a = random_symmetric(np.random.default_rng(1), 4)
        with pytest.raises(EigenSolverError) as exc:
            jacobi_eigh(a, max_sweeps=0)
        assert exc.value.residual > 0

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="eigensolver"):
            sym_eigendecomp(np.eye(2), "lanczos")


class TestSimilarityBlock:
    """Tests for build_G and relaxed_bound."""

    def test_no_state_is_data_gram(self, small_cfg):
        points = np.random.default_rng(2).normal(size=(6, 2))
        gram = build_gram_tables(points, [], KernelSpec("rbf", 1.0))
        block = build_G(gram, KernelStreamState.empty(2), small_cfg)
        np.testing.assert_array_equal(block.G, gram.k_yy)
        assert block.n_old == 0

    def test_old_cluster_diagonal(self):
        rng = np.random.default_rng(3)
        state = random_kernel_state(rng, 2)
        cfg = DMeansConfig(lambda_=1.0, q_penalty=0.2, tau=0.5)
        gram = build_gram_tables(rng.normal(size=(4, 2)), state.centers, KernelSpec("rbf", 0.5))
        block = build_G(gram, state, cfg)
        assert block.G.shape == (6, 6)
        np.testing.assert_allclose(block.G, block.G.T)
        for k, center in enumerate(state.centers):
            expected = block.gamma_diag[k] * gram.k_phiphi_diag[k] + 0.2 * center.staleness
            assert block.G[4 + k, 4 + k] == pytest.approx(expected)
        assert block.G[4, 5] == 0.0

    def test_bound_below_every_labeling(self):
        """The relaxed value never exceeds the modified cost of any labeling."""
        spec = KernelSpec("rbf", 0.4)
        for seed in range(100):
            rng = np.random.default_rng(200 + seed)
            n_old = int(rng.integers(0, 4))
            state = random_kernel_state(rng, n_old)
            cfg = DMeansConfig(
                lambda_=float(rng.uniform(0.1, 3.0)),
                q_penalty=float(rng.uniform(0.0, 0.5)),
                tau=float(rng.uniform(0.1, 2.0)),
            )
            points = rng.uniform(0.0, 1.0, size=(10, 2))
            gram = build_gram_tables(points, state.centers, spec)
            bound = relaxed_bound(build_G(gram, state, cfg), cfg.lambda_)
            labels = rng.choice(list(range(n_old)) + [20, 21, 22], size=10)
            modified = kd_objective(labels, state, gram, cfg, penalty="modified")
            assert bound <= modified + 1e-9, f"seed {seed}"

    def test_bound_uses_top_eigenvalue_when_none_exceed_lambda(self):
        block = SimilarityBlock(G=np.diag([0.5, 0.2]), gamma_diag=np.zeros(0), omega_diag=np.zeros(0),
                                n_data=2, n_old=0)
        assert relaxed_bound(block, 1.0) == pytest.approx(0.7 - (0.5 - 1.0))


class TestRounding:
    """Tests for row normalization, rotation seeding and refinement."""

    def test_select_v_fallback(self):
        vecs = np.eye(3)
        np.testing.assert_array_equal(select_V(np.array([0.9, 0.5, 0.1]), vecs, 1.0), vecs[:, :1])
        assert select_V(np.array([3.0, 2.0, 0.1]), vecs, 1.0).shape == (3, 2)

    def test_normalize_rows(self):
        v_bar, flags = normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0], [9.0, 9.0]]), 2)
        np.testing.assert_allclose(v_bar, [[0.6, 0.8], [1.0, 0.0]])
        assert len(flags) == 1

    def test_init_u_is_orthogonal(self):
        rng = np.random.default_rng(4)
        v_bar, _ = normalize_rows(rng.normal(size=(15, 4)), 15)
        u = init_U(v_bar, np.random.default_rng(0))
        np.testing.assert_allclose(u.T @ u, np.eye(4), atol=1e-12)

    def test_init_u_too_wide(self):
        with pytest.raises(ValueError, match="at most"):
            init_U(np.eye(2, 3), np.random.default_rng(0))

    def test_refine_u_is_orthogonal(self):
        rng = np.random.default_rng(5)
        v_bar, _ = normalize_rows(rng.normal(size=(10, 3)), 10)
        x = np.eye(3)[rng.integers(0, 3, size=10)]
        u = refine_U(x, v_bar)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)

    def test_recovers_rotated_indicators(self):
        rng = np.random.default_rng(6)
        truth = np.repeat([0, 1, 2], 4)
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        v_bar = np.eye(3)[truth] @ rotation
        x, u, trace, converged = solve_feasible(v_bar, np.random.default_rng(1))
        assert converged
        assert trace[-1] == pytest.approx(0.0, abs=1e-18)
        groups = sorted(sorted(idx.tolist()) for idx in _partition(x))
        assert groups == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11]]

    def test_relax_caps_at_batch_size(self, small_cfg):
        block = SimilarityBlock(G=np.diag([5.0, 4.0, 3.0, 2.0]), gamma_diag=np.ones(2), omega_diag=np.zeros(2),
                                n_data=2, n_old=2)
        workspace = relax(block, DMeansConfig(lambda_=1.0, q_penalty=0.0, tau=1.0))
        assert workspace.V_star.shape == (4, 2)
        assert workspace.V_bar.shape == (2, 2)
        assert any("keeping the top 2" in f for f in workspace.flags)


class TestSdmeansBatch:
    """Tests for sdmeans_batch."""

    def test_two_blobs(self, two_blobs, small_cfg):
        batch, truth = two_blobs
        result, state = sdmeans_batch(batch, KernelStreamState.empty(2), KernelSpec("rbf", 0.5), small_cfg)
        assert same_partition(result.labels, truth)
        assert result.active_set == {0, 1}
        assert state.next_id == 2
        assert result.extras["n_eigvecs"] == 2.0
        assert result.extras["relaxed_bound"] <= result.objective + 1e-9
        # no revivals, so both penalty variants agree
        assert result.extras["objective_exact"] == pytest.approx(result.objective)

    def test_tracks_ids_across_batches(self, two_blobs, small_cfg):
        batch, _ = two_blobs
        spec = KernelSpec("rbf", 0.5)
        first, state = sdmeans_batch(batch, KernelStreamState.empty(2), spec, small_cfg)
        second, state = sdmeans_batch(Batch(t=1, points=batch.points + 0.02), state, spec, small_cfg)
        np.testing.assert_array_equal(second.labels, first.labels)
        assert second.extras["objective_exact"] >= second.objective
        assert state.next_id == 2

    def test_jacobi_gives_same_partition(self, two_blobs):
        batch, truth = two_blobs
        cfg = DMeansConfig(lambda_=0.5, q_penalty=0.1, tau=1.0, eigensolver="jacobi", restarts=2, seed=3)
        result, _ = sdmeans_batch(batch, KernelStreamState.empty(2), KernelSpec("rbf", 0.5), cfg)
        assert same_partition(result.labels, truth)

    def test_dimension_mismatch(self, two_blobs, small_cfg):
        batch, _ = two_blobs
        with pytest.raises(DimensionMismatchError):
            sdmeans_batch(batch, KernelStreamState.empty(3), KernelSpec("rbf", 0.5), small_cfg)
