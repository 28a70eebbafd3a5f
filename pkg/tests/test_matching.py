"""
Unit tests for old-cluster matching.

Tests validate:
- Link costs equal the objective change of reviving instead of opening new
- Solver optimum against exhaustive search
- Injective, negative-cost-only links
"""

import itertools

import numpy as np
import pytest

from dynoclust.core import NEW, DMeansConfig
from dynoclust.kdmeans import kd_objective
from dynoclust.kernels import KernelSpec, build_gram_tables
from dynoclust.matching import MatchProblem, build_match_costs, solve_matching
from dynoclust.sparse_centers import KernelStreamState, SparseCenter


def exhaustive_value(costs: np.ndarray) -> float:
    """Best sum over partial injective maps of rows to columns."""
    n_temp, n_old = costs.shape
    best = 0.0
    choices = [None] + list(range(n_old))
    for pick in itertools.product(choices, repeat=n_temp):
        used = [k for k in pick if k is not None]
        if len(used) != len(set(used)):
            continue
        best = min(best, sum(costs[l, k] for l, k in enumerate(pick) if k is not None))
    return best


def random_problem(rng: np.random.Generator) -> MatchProblem:
    n_temp, n_old = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    return MatchProblem(
        costs=rng.normal(0.0, 1.0, size=(n_temp, n_old)),
        zeta=np.zeros((n_temp, n_old)),
        sizes=np.ones(n_temp, dtype=int),
        old_ids=[10 + k for k in range(n_old)],
    )


class TestSolveMatching:
    """Tests for solve_matching."""

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            problem = random_problem(rng)
            result = solve_matching(problem)
            assert result.value == pytest.approx(exhaustive_value(problem.costs), abs=1e-12)

    def test_links_are_injective_and_improving(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            problem = random_problem(rng)
            result = solve_matching(problem)
            linked = [k for k in result.assignment.values() if k != NEW]
            assert len(linked) == len(set(linked))
            assert set(result.assignment) == set(range(problem.costs.shape[0]))
            for l, k in result.assignment.items():
                if k != NEW:
                    assert problem.costs[l, problem.old_ids.index(k)] < 0

    def test_nonnegative_costs_stay_new(self):
        problem = MatchProblem(costs=np.array([[0.0, 2.0]]), zeta=np.zeros((1, 2)), sizes=np.ones(1), old_ids=[3, 4])
        result = solve_matching(problem)
        assert result.assignment == {0: NEW}
        assert result.value == 0.0

    def test_no_old_clusters(self):
        problem = MatchProblem(costs=np.zeros((2, 0)), zeta=np.zeros((2, 0)), sizes=np.ones(2))
        assert solve_matching(problem).assignment == {0: NEW, 1: NEW}

    def test_non_finite_costs(self):
        problem = MatchProblem(costs=np.array([[np.nan]]), zeta=np.zeros((1, 1)), sizes=np.ones(1), old_ids=[0])
        with pytest.raises(ValueError, match="finite"):
            solve_matching(problem)


class TestBuildMatchCosts:
    """Tests for build_match_costs."""

    def test_cost_is_revival_minus_new(self):
        rng = np.random.default_rng(6)
        centers = tuple(
            SparseCenter(id=k, coeffs=np.array([0.4, 0.6]), support=rng.uniform(0.0, 1.0, size=(2, 2)),
                         weight=float(rng.uniform(1.0, 5.0)), staleness=k + 1)
            for k in range(3)
        )
        state = KernelStreamState(dim=2, centers=centers, next_id=3)
        cfg = DMeansConfig(lambda_=0.8, q_penalty=0.1, tau=0.7)
        points = rng.uniform(0.0, 1.0, size=(7, 2))
        gram = build_gram_tables(points, centers, KernelSpec("rbf", 0.4))
        partition = [np.array([0, 1, 2]), np.array([3, 4, 5, 6])]
        problem = build_match_costs(partition, state, gram, cfg)

        assert problem.costs.shape == (2, 3)
        assert problem.old_ids == [0, 1, 2]
        np.testing.assert_array_equal(problem.sizes, [3, 4])
        base = np.array([50, 50, 50, 51, 51, 51, 51])
        j_new = kd_objective(base, state, gram, cfg)
        for l, idx in enumerate(partition):
            for k in range(3):
                labels = base.copy()
                labels[idx] = k
                expected = kd_objective(labels, state, gram, cfg) - j_new
                assert problem.costs[l, k] == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_linear_zeta(self):
        center = SparseCenter(id=0, coeffs=np.array([1.0]), support=np.array([[1.0, 1.0]]), weight=2.0, staleness=1)
        state = KernelStreamState(dim=2, centers=(center,), next_id=1)
        points = np.array([[0.0, 0.0], [2.0, 0.0]])
        gram = build_gram_tables(points, state.centers, KernelSpec())
        problem = build_match_costs([np.array([0, 1])], state, gram, DMeansConfig(1.0, 0.0, 1.0))
        # n·‖φ − ȳ‖² with ȳ = (1, 0)
        assert problem.zeta[0, 0] == pytest.approx(2.0)
