"""
DynoClust - Deterministic temporal stream-clustering engines.

This package implements D-Means, kernelized D-Means with budgeted sparse
centers, and Spectral Dynamic Means for data that arrives in batches.

Core principle: No I/O, no environment reads, no hidden randomness.
All inputs passed as arguments, all outputs returned as structured data.
"""

__version__ = "0.1.0"
