"""Clustering of client weight vectors plus the Adjusted Rand Index.

kmeans is implemented directly (kmeans++ seeding, Lloyd iterations, farthest
point re-seeding for empty clusters) so its mechanics are fully pinned down.
Agglomerative clustering rides on scipy's hierarchy routines and DBSCAN on
scikit-learn, with a noise re-assignment pass so every point lands in a
cluster, as the aggregation step requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage as scipy_linkage
from scipy.spatial.distance import cdist
from sklearn.cluster import DBSCAN
from sklearn.metrics import adjusted_rand_score

DBSCAN_MIN_SAMPLES = 3


@dataclass(frozen=True)
class ClusterLabels:
    """Complete assignment: labels in [0, cluster_count), every id used."""

    labels: np.ndarray
    cluster_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size and set(np.unique(labels)) != set(range(self.cluster_count)):
            raise ValueError("labels must cover exactly [0, cluster_count)")


def _as_matrix(points) -> np.ndarray:
    rows = [np.asarray(getattr(p, "values", p), dtype=np.float64) for p in points]
    return np.vstack(rows)


def _compact(labels: np.ndarray) -> ClusterLabels:
    uniq, compacted = np.unique(labels, return_inverse=True)
    return ClusterLabels(compacted, len(uniq))


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(cdist(x, np.vstack(centers)) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[int(rng.integers(n))])
            continue
        probs = d2 / total
        centers.append(x[int(rng.choice(n, p=probs))])
    return np.vstack(centers)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300) -> ClusterLabels:
    """Lloyd's algorithm with kmeans++ seeding under Euclidean distance.

    Converges when assignments stabilize; an empty cluster is re-seeded from
    the point farthest from its assigned center.
    """
    x = _as_matrix(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        dists = cdist(x, centers)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            if not np.any(new_labels == j):
                farthest = int(dists[np.arange(n), new_labels].argmax())
                centers[j] = x[farthest]
                new_labels[farthest] = j
                dists[farthest, j] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
    return _compact(labels)


def kmeans_objective(points, result: ClusterLabels) -> float:
    """Sum of squared distances to the centroid of each assigned cluster."""
    x = _as_matrix(points)
    total = 0.0
    for j in range(result.cluster_count):
        members = x[result.labels == j]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def agglomerative(points, k: int, linkage: str = "average") -> ClusterLabels:
    """Bottom-up merging under Euclidean distance until k clusters remain."""
    if linkage not in ("average", "complete", "single"):
        raise ValueError(f"unknown linkage {linkage!r}")
    x = _as_matrix(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if k == n:
        return ClusterLabels(np.arange(n), n)
    tree = scipy_linkage(x, method=linkage, metric="euclidean")
    labels = fcluster(tree, t=k, criterion="maxclust") - 1
    return _compact(labels)


def auto_eps(points, min_samples: int = DBSCAN_MIN_SAMPLES) -> float:
    """Neighborhood radius from the sorted mean k-nearest-neighbor distances.

    Each point's mean distance to its `min_samples` nearest neighbors is
    sorted ascending and the value at the largest discrete second difference
    (the maximum-curvature point) is returned.
    """
    x = _as_matrix(points)
    n = x.shape[0]
    if n < 2:
        return 1.0
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    kk = min(min_samples, n - 1)
    knn = np.sort(d, axis=1)[:, :kk].mean(axis=1)
    vals = np.sort(knn)
    if n < 3:
        eps = float(vals[-1])
    else:
        curvature = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        eps = float(vals[int(curvature.argmax()) + 1])
        # A knee is only meaningful when the tail rises sharply past it; on a
        # homogeneous-density curve the largest second difference is noise, and
        # any radius covering the whole curve keeps every point a core point.
        if vals[-1] <= 2.0 * eps:
            eps = float(vals[-1])
    return eps if eps > 0 else max(float(vals[-1]), 1e-12)


def dbscan(points, eps: float | None = None,
           min_samples: int = DBSCAN_MIN_SAMPLES) -> ClusterLabels:
    """Density clustering with no leftover noise.

    Noise points are re-assigned to the cluster of their nearest non-noise
    point; if no cluster forms at all, every point becomes a singleton.
    When eps is None it is auto-tuned via the knee heuristic.
    """
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    x = _as_matrix(points)
    if eps is None:
        eps = auto_eps(points, min_samples)
    if eps <= 0:
        raise ValueError("eps must be positive")
    labels = DBSCAN(eps=eps, min_samples=min_samples).fit(x).labels_.astype(np.int64)
    noise = labels == -1
    if noise.all():
        return ClusterLabels(np.arange(x.shape[0]), x.shape[0])
    if noise.any():
        d = cdist(x[noise], x[~noise])
        labels[noise] = labels[~noise][d.argmin(axis=1)]
    return _compact(labels)


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand Index; permutation-invariant, 1.0 for identical partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal length")
    if a.size < 2:
        raise ValueError("need at least two points")
    return float(adjusted_rand_score(a, b))
