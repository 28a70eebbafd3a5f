"""
Stream Runner - Fold a clustering engine over a stream of batches.

The runner is the only place that knows which engine a RunConfig selects;
it times each batch and collects per-batch results and the final state.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Union

from dynoclust.core import Batch, BatchResult, StreamState, advance_state, cluster_batch
from dynoclust.kdmeans import kd_cluster_batch
from dynoclust.sparse_centers import KernelStreamState
from dynoclust.spectral import sdmeans_batch
from dynoclust_pipeline.agents.run_config import RunConfig
from dynoclust_pipeline.agents.stream_io import metrics_record

logger = logging.getLogger(__name__)


@dataclass
class StreamRun:
    """Results of clustering a whole stream."""
    results: List[BatchResult] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    k_total: List[int] = field(default_factory=list)
    final_state: Union[StreamState, KernelStreamState, None] = None

    @property
    def labels(self):
        return [r.labels for r in self.results]

    @property
    def total_seconds(self) -> float:
        return float(sum(self.seconds))

    @property
    def flags(self) -> List[str]:
        return [flag for r in self.results for flag in r.flags]


def initial_state(run_config: RunConfig, dim: int) -> Union[StreamState, KernelStreamState]:
    if run_config.algorithm == "dmeans":
        return StreamState.empty(dim)
    return KernelStreamState.empty(dim)


def step(
    batch: Batch,
    state: Union[StreamState, KernelStreamState],
    run_config: RunConfig,
):
    """Cluster one batch and return (result, next state)."""
    cfg = run_config.params
    if run_config.algorithm == "dmeans":
        result = cluster_batch(batch, state, cfg)
        return result, advance_state(state, result, batch, cfg)
    if run_config.algorithm == "kdmeans":
        return kd_cluster_batch(batch, state, run_config.kernel, cfg)
    if run_config.algorithm == "sdmeans":
        return sdmeans_batch(batch, state, run_config.kernel, cfg)
    raise ValueError(f"Unknown algorithm {run_config.algorithm!r}")


def _n_carried(state: Union[StreamState, KernelStreamState]) -> int:
    if isinstance(state, StreamState):
        return len(state.old_clusters)
    return len(state.centers)


def run_stream(batches: Sequence[Batch], run_config: RunConfig) -> StreamRun:
    """
    Cluster every batch in order, carrying state forward.

    Returns:
        StreamRun with one result per batch; `k_total` is the number of
        clusters carried after each batch's fold
    """
    if not batches:
        raise ValueError("run_stream needs at least one batch")
    state = initial_state(run_config, batches[0].dim)
    run = StreamRun()

    for batch in batches:
        started = time.perf_counter()
        result, state = step(batch, state, run_config)
        run.seconds.append(time.perf_counter() - started)
        run.results.append(result)
        run.k_total.append(_n_carried(state))
        logger.debug(
            f"t={batch.t}: {len(result.active_set)} active, {_n_carried(state)} carried, "
            f"J={result.objective:.6g}, {result.iterations} iters"
        )

    run.final_state = state
    logger.info(
        f"Clustered {len(batches)} batches with {run_config.algorithm} in {run.total_seconds:.2f}s"
    )
    return run


def metrics_records(batches: Sequence[Batch], run: StreamRun) -> List[Dict]:
    return [
        metrics_record(batch, result, k_total, seconds)
        for batch, result, k_total, seconds in zip(batches, run.results, run.k_total, run.seconds)
    ]
