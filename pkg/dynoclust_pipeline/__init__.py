"""
DynoClust Pipeline - Streams, files, configuration and evaluation.

This package implements the agents around the deterministic engines:
- StreamGenerator: Seeded synthetic streams with ground truth
- StreamIO: JSONL stream, label, metrics and state files
- RunConfig: Config loading, presets and validation
- StreamRunner: Drives an engine over a stream
- TrackingValidator: Consistent-tracking accuracy and cost audits
- ParamSweep: Grid sweeps over (λ, T_Q, k_τ)

Agents read and write files but never change the engines' numeric results.
"""

__version__ = "0.1.0"
