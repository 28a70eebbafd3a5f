"""Shared fixtures for the DynoClust test suite."""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from dynoclust.core import Batch, DMeansConfig

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR


@pytest.fixture
def temp_dir():
    """Temporary directory for output files."""
    temp = tempfile.mkdtemp()
    yield Path(temp)
    shutil.rmtree(temp)


@pytest.fixture
def two_blobs():
    """Two tight, well-separated 2-D blobs of 10 points each; truth 0 then 1."""
    rng = np.random.default_rng(7)
    a = rng.normal([0.0, 0.0], 0.05, size=(10, 2))
    b = rng.normal([2.0, 2.0], 0.05, size=(10, 2))
    return Batch(t=0, points=np.vstack([a, b])), np.repeat([0, 1], 10)


@pytest.fixture
def small_cfg():
    return DMeansConfig(lambda_=0.5, q_penalty=0.1, tau=1.0)


def random_blob_batch(rng: np.random.Generator, t: int = 0, dim: int = 2, n_blobs: int = 3, per_blob: int = 6) -> Batch:
    """Gaussian blobs at uniform centers in [0, 1]^dim."""
    centers = rng.uniform(0.0, 1.0, size=(n_blobs, dim))
    points = np.vstack([rng.normal(c, 0.05, size=(per_blob, dim)) for c in centers])
    return Batch(t=t, points=points)
