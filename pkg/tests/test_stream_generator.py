"""
Unit tests for the synthetic stream generators.

Tests validate:
- Seed determinism
- Batch shapes, point ids and truth labels
- Birth/death bookkeeping of moving Gaussians
- Ring allocation and geometry
"""

import numpy as np
import pytest

from dynoclust_pipeline.agents.stream_generator import (
    GaussianStreamCfg,
    RingStreamCfg,
    gen_moving_gaussians,
    gen_moving_rings,
    ring_allocation,
    stream_from_config,
)


class TestMovingGaussians:
    """Tests for gen_moving_gaussians."""

    def test_same_seed_same_stream(self):
        cfg = GaussianStreamCfg(n_clusters=3, pts_per_cluster=4, steps=5, seed=9)
        a, b = gen_moving_gaussians(cfg), gen_moving_gaussians(cfg)
        for x, y in zip(a.batches, b.batches):
            np.testing.assert_array_equal(x.points, y.points)
        for x, y in zip(a.truth, b.truth):
            np.testing.assert_array_equal(x, y)
        assert a.events == b.events

    def test_different_seed_differs(self):
        a = gen_moving_gaussians(GaussianStreamCfg(steps=1, seed=1))
        b = gen_moving_gaussians(GaussianStreamCfg(steps=1, seed=2))
        assert not np.array_equal(a.batches[0].points, b.batches[0].points)

    def test_shapes_and_ids(self):
        stream = gen_moving_gaussians(GaussianStreamCfg(n_clusters=3, pts_per_cluster=8, steps=4, seed=3))
        assert len(stream.batches) == 4
        assert stream.n_points == 96
        batch = stream.batches[2]
        assert batch.t == 2
        assert batch.points.shape == (24, 2)
        assert batch.point_ids[0] == "2-0"
        assert batch.point_ids[-1] == "2-23"
        assert stream.config["kind"] == "gaussians"

    def test_no_deaths(self):
        stream = gen_moving_gaussians(GaussianStreamCfg(n_clusters=4, steps=6, death_prob=0.0))
        for labels in stream.truth:
            np.testing.assert_array_equal(labels, np.repeat([0, 1, 2, 3], 15))
        assert [e["event"] for e in stream.events] == ["birth"] * 4
        assert stream.n_true_clusters == 4

    def test_certain_death_replaces_every_cluster(self):
        stream = gen_moving_gaussians(GaussianStreamCfg(n_clusters=2, pts_per_cluster=3, steps=3, death_prob=1.0))
        np.testing.assert_array_equal(stream.truth[1], [2, 2, 2, 3, 3, 3])
        np.testing.assert_array_equal(stream.truth[2], [4, 4, 4, 5, 5, 5])
        deaths = [e for e in stream.events if e["event"] == "death"]
        assert [(e["t"], e["cluster"]) for e in deaths] == [(1, 0), (1, 1), (2, 2), (2, 3)]
        assert stream.n_true_clusters == 6

    def test_invalid_config(self):
        with pytest.raises(ValueError, match="death_prob"):
            GaussianStreamCfg(death_prob=1.5)
        with pytest.raises(ValueError):
            GaussianStreamCfg(n_clusters=0)


class TestMovingRings:
    """Tests for gen_moving_rings."""

    def test_allocation(self):
        assert ring_allocation(400, 3) == [134, 133, 133]
        assert ring_allocation(10, 4) == [3, 3, 2, 2]
        assert sum(ring_allocation(401, 3)) == 401

    def test_first_step_geometry(self):
        stream = gen_moving_rings(RingStreamCfg(steps=2, seed=4))
        points, labels = stream.batches[0].points, stream.truth[0]
        assert points.shape == (400, 2)
        np.testing.assert_array_equal(np.bincount(labels), [134, 133, 133])
        radius = np.linalg.norm(points - 0.5, axis=1)
        assert np.mean(radius[labels == 0]) == pytest.approx(0.4, abs=0.02)
        assert np.mean(radius[labels == 1]) == pytest.approx(0.2, abs=0.02)
        np.testing.assert_allclose(points[labels == 2].mean(axis=0), [0.5, 0.5], atol=0.02)

    def test_truth_is_ring_index(self):
        stream = gen_moving_rings(RingStreamCfg(pts_per_step=30, radii=(0.3, 0.0), steps=3))
        for labels in stream.truth:
            np.testing.assert_array_equal(labels, np.repeat([0, 1], 15))
        assert stream.config["radii"] == [0.3, 0.0]

    def test_invalid_radii(self):
        with pytest.raises(ValueError, match="radii"):
            RingStreamCfg(radii=(0.2, 0.2))
        with pytest.raises(ValueError, match="radii"):
            RingStreamCfg(radii=(-0.1,))


class TestStreamFromConfig:
    """Tests for stream_from_config."""

    def test_seed_offset(self):
        shifted = stream_from_config({"kind": "gaussians", "steps": 2, "seed": 3}, seed_offset=2)
        direct = gen_moving_gaussians(GaussianStreamCfg(steps=2, seed=5))
        np.testing.assert_array_equal(shifted.batches[1].points, direct.batches[1].points)

    def test_rings_from_lists(self):
        stream = stream_from_config({"kind": "rings", "radii": [0.3, 0.0], "pts_per_step": 20, "steps": 1})
        assert stream.batches[0].n_points == 20

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            stream_from_config({"kind": "spirals"})
