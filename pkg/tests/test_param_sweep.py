"""
Unit tests for parameter sweeps.

Tests validate:
- Grid loading and validation
- One row per (cell, trial) in grid order
- Process-pool sweeps agree with in-process sweeps
- Tracking accuracy of the preset settings on moving Gaussians and rings
"""

import pandas as pd
import pytest

from dynoclust_pipeline.agents.param_sweep import (
    SWEEP_COLUMNS,
    grid_cells,
    load_grid,
    summarize_sweep,
    sweep,
    write_sweep_table,
)
from dynoclust_pipeline.agents.run_config import ConfigValidationError, load_presets

SMALL_STREAM = {"kind": "gaussians", "n_clusters": 3, "pts_per_cluster": 8, "steps": 4, "seed": 3}
SMALL_GRID = {"lambda": [0.04, 0.08], "t_q": [6.8], "k_tau": [1.01]}


class TestGrid:
    """Tests for grid loading."""

    def test_fixture(self, fixtures_dir):
        grid = load_grid(fixtures_dir / "grid_single.json")
        assert grid_cells(grid) == [(0.04, 6.8, 1.01)]

    def test_cell_order(self):
        grid = {"lambda": [1.0, 2.0], "t_q": [3.0], "k_tau": [1.0, 1.5]}
        assert grid_cells(load_grid(grid)) == [(1.0, 3.0, 1.0), (1.0, 3.0, 1.5), (2.0, 3.0, 1.0), (2.0, 3.0, 1.5)]

    def test_invalid_grids(self):
        with pytest.raises(ConfigValidationError, match="t_q"):
            load_grid({"lambda": [0.1], "t_q": [1.0], "k_tau": [1.0]})
        with pytest.raises(ConfigValidationError):
            load_grid({"lambda": [], "t_q": [2.0], "k_tau": [1.0]})
        with pytest.raises(ConfigValidationError, match="k_tau"):
            load_grid({"lambda": [0.1], "t_q": [2.0]})

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            load_grid(temp_dir / "absent.json")


class TestSweep:
    """Tests for sweep."""

    def test_rows_and_columns(self):
        table = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM)
        assert list(table.columns) == SWEEP_COLUMNS
        assert len(table) == 4
        assert table["lambda"].tolist() == [0.04, 0.04, 0.08, 0.08]
        assert table["trial"].tolist() == [0, 1, 0, 1]
        assert table["accuracy"].between(0.0, 1.0).all()
        assert (table["seconds"] > 0).all()

    def test_deterministic_accuracy(self):
        a = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM)
        b = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM)
        pd.testing.assert_frame_equal(a.drop(columns="seconds"), b.drop(columns="seconds"))

    def test_workers_agree(self):
        serial = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM)
        parallel = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM, workers=2)
        pd.testing.assert_frame_equal(serial.drop(columns="seconds"), parallel.drop(columns="seconds"))

    def test_kernel_engine_needs_base_kernel(self):
        with pytest.raises(ConfigValidationError, match="requires a kernel"):
            sweep("kdmeans", SMALL_GRID, 1, SMALL_STREAM)
        table = sweep("kdmeans", SMALL_GRID, 1, SMALL_STREAM,
                      base_config={"kernel": {"type": "rbf", "omega": 0.1}, "budget": 8})
        assert len(table) == 2

    def test_invalid_trials(self):
        with pytest.raises(ValueError, match="trials"):
            sweep("dmeans", SMALL_GRID, 0, SMALL_STREAM)

    def test_summary_and_outputs(self, temp_dir):
        table = sweep("dmeans", SMALL_GRID, 2, SMALL_STREAM)
        summary = summarize_sweep(table)
        assert summary["trials"].tolist() == [2, 2]
        path = write_sweep_table(table, temp_dir / "out" / "sweep.csv", parquet=True)
        assert path.read_text().splitlines()[0] == "lambda,t_q,k_tau,trial,accuracy,seconds"
        back = pd.read_parquet(temp_dir / "out" / "sweep.parquet")
        pd.testing.assert_frame_equal(back, table)


def preset_cell(name: str):
    """Single-cell grid and remaining keys of a registry preset."""
    preset = dict(load_presets()[name])
    grid = {"lambda": [preset.pop("lambda")], "t_q": [preset.pop("t_q")], "k_tau": [preset.pop("k_tau")]}
    return preset.pop("algorithm"), grid, preset


class TestGaussianAccuracy:
    """Integration: moving Gaussians, 5 clusters of 15 points, 30 steps, 10 trials."""

    def test_tuned_dmeans_setting(self):
        algorithm, grid, base = preset_cell("gaussians_dmeans")
        table = sweep(algorithm, grid, 10, {"kind": "gaussians", "steps": 30, "seed": 0}, base_config=base)
        assert base["restarts"] == 3
        assert table["accuracy"].mean() >= 0.80


class TestRingAccuracy:
    """Integration: moving rings, 400 points per step, 10 steps, 5 trials."""

    STREAM = {"kind": "rings", "steps": 10, "seed": 0}

    def test_sdmeans_follows_the_rings(self):
        algorithm, grid, base = preset_cell("rings_sdmeans")
        table = sweep(algorithm, grid, 5, self.STREAM, base_config=base)
        assert table["accuracy"].mean() >= 0.60

    def test_dmeans_cannot(self):
        algorithm, grid, base = preset_cell("rings_dmeans")
        table = sweep(algorithm, grid, 5, self.STREAM, base_config=base)
        assert table["accuracy"].mean() <= 0.45
