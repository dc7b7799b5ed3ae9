"""Concept matching on both sides of the federation.

The server keeps one model per concept plus a per-concept distance record:
the distance at which that model last accepted an update. An aggregated
cluster model may replace a concept model only if it is closer than both the
concept's record and any other concept candidate, which keeps each concept
model moving along a single shrinking-step descent path. Clients pick the
concept model with the smallest loss on their current data.

`verify_descent_contraction` checks the underlying shrinking-step property
numerically on strongly convex quadratics, where the step-size regime that
guarantees strict contraction is known exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import model as mc
from .fedops import AggregatedClusterModel, distance
from .model import Batch, WeightVector

logger = logging.getLogger(__name__)


@dataclass
class ConceptModelSet:
    """The K concept models plus their admission-distance records."""

    models: list[WeightVector]
    dist_record: np.ndarray

    def __post_init__(self):
        self.dist_record = np.asarray(self.dist_record, dtype=np.float64)
        if len(self.models) < 1 or self.dist_record.shape != (len(self.models),):
            raise ValueError("need one record entry per concept model")

    @classmethod
    def initialize(cls, shape, k: int, seed: int) -> "ConceptModelSet":
        """All K models start from one shared random init.

        Identical starting models make the first matching round a clean greedy
        assignment: every model is equidistant from every cluster, so each
        cluster in turn claims the lowest-indexed still-pristine model instead
        of several clusters fighting over whichever one the draw favored.
        """
        w = mc.init_weights(shape, int(np.random.default_rng([seed, 0]).integers(2**31)))
        return cls([w] * k, np.full(k, np.inf))


@dataclass(frozen=True)
class MatchAssignment:
    cluster_id: int
    concept_id: int | None
    match_distance: float | None


@dataclass(frozen=True)
class MatchOutcome:
    assignments: tuple[MatchAssignment, ...]
    updated_set: ConceptModelSet


def server_concept_match(concept_set: ConceptModelSet,
                         clusters: list[AggregatedClusterModel],
                         metric: str = "manhattan") -> MatchOutcome:
    """Match aggregated cluster models to concept models and update them.

    Clusters are processed in ascending cluster_id. A concept qualifies as
    candidate only if its distance to the cluster beats both the concept's
    current record and the best candidate so far (strict inequalities). The
    winning concept's model is replaced by the cluster model and its record
    lowered to the match distance; a cluster with no qualifying concept
    leaves the set untouched and is reported unmatched.
    """
    assignments = []
    for cluster in sorted(clusters, key=lambda c: c.cluster_id):
        candidate = None
        candidate_dist = np.inf
        for k, concept_model in enumerate(concept_set.models):
            d = distance(cluster.weights, concept_model, metric)
            if d < concept_set.dist_record[k] and d < candidate_dist:
                candidate = k
                candidate_dist = d
        if candidate is None:
            logger.warning("cluster %d matched no concept model; skipping update",
                           cluster.cluster_id)
            assignments.append(MatchAssignment(cluster.cluster_id, None, None))
            continue
        concept_set.models[candidate] = cluster.weights
        concept_set.dist_record[candidate] = candidate_dist
        assignments.append(MatchAssignment(cluster.cluster_id, candidate, candidate_dist))
    return MatchOutcome(tuple(assignments), concept_set)


def client_concept_match(models: list[WeightVector], data: Batch, loss_fn=mc.loss) -> int:
    """Index of the model with the smallest loss on `data`; ties take the lowest."""
    if not models:
        raise ValueError("need at least one concept model")
    losses = [loss_fn(w, data) for w in models]
    return int(np.argmin(losses))


@dataclass(frozen=True)
class ContractionReport:
    passed: bool
    step_norms: np.ndarray  # ||w^{t+1} - w^t|| for each step
    gradient_norms: np.ndarray  # ||grad at w^t|| for t = 0..steps


def verify_descent_contraction(a_matrix: np.ndarray, offset: np.ndarray,
                               w0: np.ndarray, eta: float,
                               steps: int) -> ContractionReport:
    """Gradient descent on L(w) = 0.5 (w-b)^T A (w-b) with contraction checks.

    Requires A symmetric positive definite and 0 < eta < 1/lambda_max(A), the
    regime where consecutive step norms and gradient norms both shrink
    strictly. Returns whether every consecutive pair did, plus the traces.
    """
    a_matrix = np.asarray(a_matrix, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    w = np.asarray(w0, dtype=np.float64).copy()
    if a_matrix.ndim != 2 or a_matrix.shape[0] != a_matrix.shape[1]:
        raise ValueError("A must be square")
    if not np.allclose(a_matrix, a_matrix.T, atol=1e-10):
        raise ValueError("A must be symmetric")
    eigvals = np.linalg.eigvalsh(a_matrix)
    if eigvals[0] <= 0:
        raise ValueError("A must be positive definite")
    lam_max = float(eigvals[-1])
    if not 0 < eta < 1.0 / lam_max:
        raise ValueError(f"eta must be in (0, {1.0 / lam_max:.6g})")
    if steps < 2:
        raise ValueError("need at least two steps to compare")
    if np.allclose(w, offset):
        raise ValueError("w0 must not be the minimizer")

    step_norms = []
    grad_norms = [float(np.linalg.norm(a_matrix @ (w - offset)))]
    for _ in range(steps):
        grad = a_matrix @ (w - offset)
        w_next = w - eta * grad
        step_norms.append(float(np.linalg.norm(w_next - w)))
        w = w_next
        grad_norms.append(float(np.linalg.norm(a_matrix @ (w - offset))))

    steps_arr = np.array(step_norms)
    grads_arr = np.array(grad_norms)
    passed = bool(np.all(steps_arr[1:] < steps_arr[:-1])
                  and np.all(grads_arr[1:] < grads_arr[:-1]))
    return ContractionReport(passed, steps_arr, grads_arr)
