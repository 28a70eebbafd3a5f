"""
Param Sweep - Grid search over (λ, T_Q, k_τ) on generated streams.

For every grid cell and trial: generate a stream (stream seed + trial),
cluster it, score consistent-tracking accuracy. The result is one flat,
plot-ready table with header `lambda,t_q,k_tau,trial,accuracy,seconds`.

Cells are independent jobs; with workers > 1 they run in a process pool
and the rows are sorted back into grid order, so only `seconds` can
differ from a sequential sweep.
"""

import itertools
import json
import logging
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from dynoclust_pipeline.agents.run_config import ConfigValidationError, build_run_config, schema_errors
from dynoclust_pipeline.agents.stream_generator import stream_from_config
from dynoclust_pipeline.agents.stream_io import labels_frame
from dynoclust_pipeline.agents.stream_runner import run_stream
from dynoclust_pipeline.agents.tracking_validator import consistent_accuracy

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["lambda", "t_q", "k_tau", "trial", "accuracy", "seconds"]
GRID_KEYS = ("lambda", "t_q", "k_tau")


def load_grid(source: Union[str, Path, Dict]) -> Dict[str, List[float]]:
    """
    Load a `{"lambda": [...], "t_q": [...], "k_tau": [...]}` grid.

    Raises:
        FileNotFoundError: If the grid file does not exist
        ConfigValidationError: If a key is missing or a list is empty
    """
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"No such grid file: {path}")
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigValidationError([f"{path}: invalid JSON ({e.msg} at line {e.lineno})"])

    errors = schema_errors(data, "grid.schema.json")
    if errors:
        raise ConfigValidationError(errors)
    return {key: [float(v) for v in data[key]] for key in GRID_KEYS}


def grid_cells(grid: Dict[str, List[float]]) -> List[Tuple[float, float, float]]:
    """Cartesian product of the grid in (λ, T_Q, k_τ) order."""
    return list(itertools.product(grid["lambda"], grid["t_q"], grid["k_tau"]))


def _cell_config(algorithm: str, cell: Tuple[float, float, float], base_config: Dict) -> Dict:
    lambda_, t_q, k_tau = cell
    config = {k: v for k, v in base_config.items() if k not in ("q", "tau", "preset")}
    config.update({"algorithm": algorithm, "lambda": lambda_, "t_q": t_q, "k_tau": k_tau})
    return config


def run_trial(job: Tuple) -> Dict:
    """
    Generate, cluster and score one (cell, trial).

    Top-level so a process pool can pickle it.
    """
    algorithm, cell, trial, stream_cfg, base_config = job
    run_config = build_run_config(_cell_config(algorithm, cell, base_config),
                                  seed=int(base_config.get("seed", 0)) + trial)
    stream = stream_from_config(stream_cfg, seed_offset=trial)
    run = run_stream(stream.batches, run_config)
    report = consistent_accuracy(
        labels_frame(stream.batches, run.labels),
        labels_frame(stream.batches, stream.truth),
    )
    return {
        "lambda": cell[0],
        "t_q": cell[1],
        "k_tau": cell[2],
        "trial": trial,
        "accuracy": report.overall,
        "seconds": run.total_seconds,
    }


def sweep(
    algorithm: str,
    grid: Dict[str, List[float]],
    trials: int,
    stream_cfg: Dict,
    base_config: Optional[Dict] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Run every (cell, trial) and return the sweep table.

    Args:
        algorithm: dmeans, kdmeans or sdmeans
        grid: Lists of λ, T_Q and k_τ values
        trials: Streams per cell; trial i uses stream seed + i
        stream_cfg: Generator mapping, see stream_from_config
        base_config: Run-config keys shared by every cell (kernel, budget, ...)
        workers: Process count; 1 runs in-process

    Returns:
        DataFrame with SWEEP_COLUMNS, one row per (cell, trial), grid order

    Raises:
        ConfigValidationError: If any cell's config is invalid (checked up front)
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base_config = dict(base_config or {})
    cells = grid_cells(grid)
    for cell in cells:
        build_run_config(_cell_config(algorithm, cell, base_config), seed=0)

    jobs = [(algorithm, cell, trial, stream_cfg, base_config) for cell in cells for trial in range(trials)]
    logger.info(f"Sweeping {len(cells)} cells x {trials} trials ({len(jobs)} runs) with {workers} worker(s)")

    if workers > 1:
        with Pool(processes=workers) as pool:
            rows = pool.map(run_trial, jobs)
    else:
        rows = [run_trial(job) for job in jobs]

    order = {cell: i for i, cell in enumerate(cells)}
    rows.sort(key=lambda r: (order[(r["lambda"], r["t_q"], r["k_tau"])], r["trial"]))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """Mean accuracy and runtime per grid cell."""
    return (
        table.groupby(["lambda", "t_q", "k_tau"], sort=False)
        .agg(accuracy=("accuracy", "mean"), seconds=("seconds", "mean"), trials=("trial", "count"))
        .reset_index()
    )


def write_sweep_table(table: pd.DataFrame, output_path: Union[str, Path], parquet: bool = False) -> Path:
    """Write the sweep CSV (and optionally a Parquet copy next to it)."""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_path, index=False)
    print(f"✓ Saved {output_path}")
    if parquet:
        parquet_path = output_path.with_suffix(".parquet")
        table.to_parquet(parquet_path, index=False)
        print(f"✓ Saved {parquet_path}")
    return output_path
