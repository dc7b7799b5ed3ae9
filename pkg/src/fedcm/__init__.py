"""Desk-scale federated continual learning with per-concept model matching."""

from .model import Batch, LayerShape, OptimizerState, WeightVector
from .orchestrator import RunConfig, RunSummary, run, run_cm, run_vanilla

__all__ = [
    "Batch", "LayerShape", "OptimizerState", "WeightVector",
    "RunConfig", "RunSummary", "run", "run_cm", "run_vanilla",
]
