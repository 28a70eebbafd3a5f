"""
Stream Generator - Seeded synthetic streams with ground-truth cluster ids.

Two generators:
- Moving Gaussians: clusters random-walk in the unit square, die at random
  and are replaced in the same step by a new cluster at a uniform location.
- Moving rings: concentric rings (a radius-0 ring is a blob) whose centers
  random-walk independently.

All randomness comes from one numpy PCG64 generator seeded with the config
seed, so a seed reproduces the stream bit for bit on any platform.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from dynoclust.core import Batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianStreamCfg:
    """Moving-Gaussian stream parameters (domain is the unit square)."""
    n_clusters: int = 5
    pts_per_cluster: int = 15
    noise_sd: float = 0.05
    walk_sd: float = 0.05
    death_prob: float = 0.05
    steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.pts_per_cluster < 1 or self.steps < 1:
            raise ValueError("n_clusters, pts_per_cluster and steps must be >= 1")
        if not 0.0 <= self.death_prob <= 1.0:
            raise ValueError(f"death_prob must be in [0, 1], got {self.death_prob}")
        if self.noise_sd < 0 or self.walk_sd < 0:
            raise ValueError("noise_sd and walk_sd must be >= 0")


@dataclass(frozen=True)
class RingStreamCfg:
    """Moving-ring stream parameters."""
    pts_per_step: int = 400
    radii: Tuple[float, ...] = (0.4, 0.2, 0.0)
    noise_sd: float = 0.03
    walk_sd: float = 0.05
    steps: int = 10
    seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii or any(r < 0 for r in radii) or len(set(radii)) != len(radii):
            raise ValueError(f"radii must be nonnegative and distinct, got {radii}")
        if self.pts_per_step < len(radii) or self.steps < 1:
            raise ValueError("pts_per_step must cover every ring and steps must be >= 1")
        if self.noise_sd < 0 or self.walk_sd < 0:
            raise ValueError("noise_sd and walk_sd must be >= 0")


@dataclass
class LabeledStream:
    """Batches plus the true cluster id of every point and a birth/death log."""
    batches: List[Batch]
    truth: List[np.ndarray]
    events: List[Dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return sum(b.n_points for b in self.batches)

    @property
    def n_true_clusters(self) -> int:
        return len({int(c) for labels in self.truth for c in labels})


def _point_ids(t: int, n: int) -> Tuple[str, ...]:
    return tuple(f"{t}-{i}" for i in range(n))


def gen_moving_gaussians(cfg: GaussianStreamCfg) -> LabeledStream:
    """
    Generate a moving-Gaussian stream.

    Per step t > 0 every center first takes an isotropic Gaussian step
    (sd walk_sd); then each cluster dies with probability death_prob and is
    replaced by a cluster with a fresh id at a uniform location. Each live
    cluster then emits pts_per_cluster points with isotropic noise noise_sd.

    Returns:
        LabeledStream whose truth ids are never reused after a death
    """
    rng = np.random.default_rng(cfg.seed)
    centers = rng.uniform(0.0, 1.0, size=(cfg.n_clusters, 2))
    ids = list(range(cfg.n_clusters))
    next_id = cfg.n_clusters
    events = [{"t": 0, "event": "birth", "cluster": k} for k in ids]

    batches, truth = [], []
    for t in range(cfg.steps):
        if t > 0:
            centers = centers + rng.normal(0.0, cfg.walk_sd, size=centers.shape)
            deaths = rng.uniform(size=cfg.n_clusters) < cfg.death_prob
            for k in np.flatnonzero(deaths):
                events.append({"t": t, "event": "death", "cluster": ids[k]})
                ids[k] = next_id
                next_id += 1
                centers[k] = rng.uniform(0.0, 1.0, size=2)
                events.append({"t": t, "event": "birth", "cluster": ids[k]})

        points = np.vstack([
            rng.normal(centers[k], cfg.noise_sd, size=(cfg.pts_per_cluster, 2))
            for k in range(cfg.n_clusters)
        ])
        labels = np.repeat(np.array(ids, dtype=int), cfg.pts_per_cluster)
        batches.append(Batch(t=t, points=points, point_ids=_point_ids(t, len(points))))
        truth.append(labels)

    logger.info(f"Generated {cfg.steps} Gaussian steps, {next_id} true clusters, seed {cfg.seed}")
    return LabeledStream(batches=batches, truth=truth, events=events,
                         config={"kind": "gaussians", **asdict(cfg)})


def ring_allocation(total: int, n_rings: int) -> List[int]:
    """Split `total` points over rings as evenly as possible, remainder to the first rings."""
    base, remainder = divmod(total, n_rings)
    return [base + (1 if r < remainder else 0) for r in range(n_rings)]


def gen_moving_rings(cfg: RingStreamCfg) -> LabeledStream:
    """
    Generate a moving-ring stream.

    Every ring starts centered at (0.5, 0.5); from t = 1 each ring center
    takes its own Gaussian step (sd walk_sd). Points are uniform in angle on
    their ring plus isotropic noise noise_sd. The true id is the ring index.
    """
    rng = np.random.default_rng(cfg.seed)
    n_rings = len(cfg.radii)
    centers = np.full((n_rings, 2), 0.5)
    counts = ring_allocation(cfg.pts_per_step, n_rings)
    events = [{"t": 0, "event": "birth", "cluster": r} for r in range(n_rings)]

    batches, truth = [], []
    for t in range(cfg.steps):
        if t > 0:
            centers = centers + rng.normal(0.0, cfg.walk_sd, size=centers.shape)
        blocks = []
        for r, (radius, count) in enumerate(zip(cfg.radii, counts)):
            angle = rng.uniform(0.0, 2.0 * np.pi, size=count)
            ring = centers[r] + radius * np.column_stack([np.cos(angle), np.sin(angle)])
            blocks.append(ring + rng.normal(0.0, cfg.noise_sd, size=(count, 2)))
        points = np.vstack(blocks)
        labels = np.repeat(np.arange(n_rings), counts)
        batches.append(Batch(t=t, points=points, point_ids=_point_ids(t, len(points))))
        truth.append(labels)

    logger.info(f"Generated {cfg.steps} ring steps ({counts} points per ring), seed {cfg.seed}")
    config = {"kind": "rings", **asdict(cfg)}
    config["radii"] = list(cfg.radii)
    return LabeledStream(batches=batches, truth=truth, events=events, config=config)


def stream_from_config(data: Dict, seed_offset: int = 0) -> LabeledStream:
    """
    Build a stream from a `{"kind": ..., <generator fields>}` mapping.

    `seed_offset` is added to the configured seed (one stream per sweep trial).
    """
    fields = dict(data)
    kind = fields.pop("kind", None)
    fields["seed"] = int(fields.get("seed", 0)) + seed_offset
    if kind == "gaussians":
        return gen_moving_gaussians(GaussianStreamCfg(**fields))
    if kind == "rings":
        if "radii" in fields:
            fields["radii"] = tuple(fields["radii"])
        return gen_moving_rings(RingStreamCfg(**fields))
    raise ValueError(f"Stream kind must be 'gaussians' or 'rings', got {kind!r}")
