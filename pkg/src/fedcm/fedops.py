"""Distance metrics over weight vectors and sample-weighted FedAvg."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import WeightVector

METRICS = ("manhattan", "euclidean", "chebyshev")


@dataclass(frozen=True)
class ClientModelUpdate:
    client_id: int
    weights: WeightVector
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass(frozen=True)
class AggregatedClusterModel:
    cluster_id: int
    weights: WeightVector
    total_samples: int
    member_client_ids: tuple[int, ...]


def distance(a: WeightVector, b: WeightVector, metric: str = "manhattan") -> float:
    """L1 / L2 / Linf norm of the element-wise weight difference."""
    if a.shape != b.shape:
        raise ValueError("weight vectors have different shapes")
    diff = a.values - b.values
    if metric == "manhattan":
        return float(np.abs(diff).sum())
    if metric == "euclidean":
        return float(np.linalg.norm(diff))
    if metric == "chebyshev":
        return float(np.abs(diff).max()) if diff.size else 0.0
    raise ValueError(f"unknown metric {metric!r}")


def fedavg(updates: list[ClientModelUpdate], cluster_id: int = 0) -> AggregatedClusterModel:
    """Coordinate-wise average weighted by each client's sample count."""
    if not updates:
        raise ValueError("fedavg requires at least one update")
    shape = updates[0].weights.shape
    if any(u.weights.shape != shape for u in updates):
        raise ValueError("all updates must share one shape")
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    stacked = np.vstack([u.weights.values for u in updates])
    avg = (counts[:, None] * stacked).sum(axis=0) / counts.sum()
    return AggregatedClusterModel(
        cluster_id=cluster_id,
        weights=WeightVector(shape, avg),
        total_samples=int(counts.sum()),
        member_client_ids=tuple(u.client_id for u in updates),
    )
