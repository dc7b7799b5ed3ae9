"""Full training loop: per-concept models with matching, and a vanilla baseline.

Each round, every client draws a window of drifting local data, picks the
lowest-loss concept model, fine-tunes it, and ships the weights back. The
server clusters the client models, averages each cluster, and matches the
aggregates against its concept models. The vanilla baseline keeps a single
global model and averages all clients directly.

Ground-truth concept ids are consumed exclusively by the metric code in this
module; none of the learning-path operations can receive them.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import clustering as cl
from . import model as mc
from .datagen import make_concepts, next_experience, partition_to_clients
from .fedops import ClientModelUpdate, fedavg
from .matching import ConceptModelSet, MatchAssignment, server_concept_match, client_concept_match
from .model import LayerShape, OptimizerState

CLUSTERING_ALGORITHMS = ("kmeans", "agglomerative", "dbscan")
MODES = ("cm", "vanilla")


@dataclass(frozen=True)
class RunConfig:
    """All knobs for one experiment; defaults are the desk-scale protocol."""

    n_clients: int = 20
    n_concepts_true: int = 5
    n_concepts_configured: int = 5
    rounds: int = 100
    window_size: int = 320
    input_dim: int = 2
    hidden_dims: tuple[int, ...] = (32,)
    classes_per_concept: int = 4
    samples_per_class: int = 2286
    separation: float = 400.0
    concept_std: float = 0.0025
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 0.1
    epochs: int = 15
    patience: int = 3
    minibatch_size: int = 64
    holdout_fraction: float = 0.0
    clustering: str = "kmeans"
    dbscan_min_samples: int = 3
    dbscan_eps: float | None = None
    linkage: str = "average"
    distance_metric: str = "manhattan"
    task_incremental: bool = False
    seed: int = 0
    mode: str = "cm"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    def validate(self) -> None:
        positive = {
            "n_clients": self.n_clients, "n_concepts_true": self.n_concepts_true,
            "n_concepts_configured": self.n_concepts_configured, "rounds": self.rounds,
            "window_size": self.window_size, "input_dim": self.input_dim,
            "classes_per_concept": self.classes_per_concept,
            "samples_per_class": self.samples_per_class, "epochs": self.epochs,
            "minibatch_size": self.minibatch_size,
        }
        for name, value in positive.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.separation <= 0 or self.concept_std <= 0 or self.learning_rate < 0:
            raise ValueError("separation and concept_std must be positive, learning_rate >= 0")
        if self.clustering not in CLUSTERING_ALGORITHMS:
            raise ValueError(f"clustering must be one of {CLUSTERING_ALGORITHMS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.distance_metric not in ("manhattan", "euclidean", "chebyshev"):
            raise ValueError("distance_metric must be manhattan, euclidean or chebyshev")

    @property
    def output_dim(self) -> int:
        return self.n_concepts_true * self.classes_per_concept

    @property
    def layer_shape(self) -> LayerShape:
        return LayerShape(self.input_dim, self.hidden_dims, self.output_dim)


@dataclass(frozen=True)
class ClientMatchFlag:
    client_id: int
    true_concept: int
    matched_concept: int | None
    chosen_model: int
    correct: bool


@dataclass(frozen=True)
class RoundReport:
    round: int
    per_concept_accuracy: np.ndarray
    weighted_avg_accuracy: float
    ari: float | None
    cluster_count: int | None
    client_matches: tuple[ClientMatchFlag, ...]
    server_assignments: tuple[MatchAssignment, ...] | None


@dataclass(frozen=True)
class RunSummary:
    mode: str
    config: RunConfig
    reports: tuple[RoundReport, ...]
    final_per_concept_accuracy: np.ndarray
    final_weighted_accuracy: float
    mean_ari: float | None
    min_ari: float | None
    rounds_with_perfect_clustering: int | None
    concept_matching_accuracy: float | None


def _derived_seed(*parts: int) -> int:
    return int(np.random.default_rng(list(parts)).integers(2**31))


# A k-way kmeans split whose within-cluster cost is below this fraction of the
# single-cluster cost is treated as having found all genuinely distinct groups;
# asking for more clusters would only shave off degenerate sub-groups.
_KMEANS_COLLAPSE_RATIO = 1e-6


def _cluster(config: RunConfig, points, round_no: int) -> cl.ClusterLabels:
    n = len(points)
    if config.clustering == "kmeans":
        kmax = min(config.n_concepts_configured, n)
        seed = _derived_seed(config.seed, 5, round_no)
        base_obj = cl.kmeans_objective(points, cl.kmeans(points, 1, seed=seed))
        for k in range(1, kmax):
            result = cl.kmeans(points, k, seed=seed)
            if cl.kmeans_objective(points, result) <= _KMEANS_COLLAPSE_RATIO * base_obj:
                return result
        return cl.kmeans(points, kmax, seed=seed)
    if config.clustering == "agglomerative":
        return cl.agglomerative(points, min(config.n_concepts_configured, n),
                                linkage=config.linkage)
    return cl.dbscan(points, eps=config.dbscan_eps,
                     min_samples=config.dbscan_min_samples)


def _majority_cluster(labels: np.ndarray, true_concepts: np.ndarray,
                      concept: int) -> int | None:
    """Cluster id holding the most clients of `concept`; ties take the lowest id."""
    members = labels[true_concepts == concept]
    if members.size == 0:
        return None
    counts = Counter(int(x) for x in members)
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]


def round_match_flags(chosen: list[int], true_concepts: list[int],
                      labels: np.ndarray,
                      cluster_concepts: dict[int, int | None]) -> tuple[ClientMatchFlag, ...]:
    """Per-client correctness via majority-cluster mapping.

    A client's matching counts as correct when the model index it chose equals
    the concept index the server assigned to the majority cluster of the
    client's (hidden) data concept.
    """
    true_arr = np.asarray(true_concepts)
    flags = []
    for i, (k_star, concept) in enumerate(zip(chosen, true_concepts)):
        majority = _majority_cluster(labels, true_arr, concept)
        matched = cluster_concepts.get(majority) if majority is not None else None
        flags.append(ClientMatchFlag(i, concept, matched, k_star,
                                     matched is not None and k_star == matched))
    return tuple(flags)


@dataclass
class _Attribution:
    """Audit trail mapping true concepts to the model indices that serve them."""

    n_concepts: int
    n_models: int
    server_counts: np.ndarray = field(init=False)
    client_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.server_counts = np.zeros((self.n_concepts, self.n_models), dtype=np.int64)
        self.client_counts = np.zeros((self.n_concepts, self.n_models), dtype=np.int64)

    def record(self, flags: tuple[ClientMatchFlag, ...]) -> None:
        seen = set()
        for flag in flags:
            self.client_counts[flag.true_concept, flag.chosen_model] += 1
            if flag.matched_concept is not None and flag.true_concept not in seen:
                self.server_counts[flag.true_concept, flag.matched_concept] += 1
                seen.add(flag.true_concept)

    def model_for(self, concept: int) -> int:
        if self.server_counts[concept].sum() > 0:
            return int(self.server_counts[concept].argmax())
        if self.client_counts[concept].sum() > 0:
            return int(self.client_counts[concept].argmax())
        return 0


def _evaluate(config: RunConfig, datasets, model_of_concept) -> tuple[np.ndarray, float]:
    accs = np.array([mc.accuracy(model_of_concept(c), datasets[c].test)
                     for c in range(config.n_concepts_true)])
    sizes = np.array([len(datasets[c].test) for c in range(config.n_concepts_true)],
                     dtype=np.float64)
    return accs, float((accs * sizes).sum() / sizes.sum())


def _client_round(config: RunConfig, models, experiences, task_maps, round_no):
    """Match + fine-tune every client; pure per client given derived seeds.

    Every client gets a fresh optimizer and the same shuffle stream each
    round: the only thing that distinguishes two clients fine-tuning the same
    concept model is then their local data, which keeps the aggregated
    per-concept updates on a smooth contraction path instead of burying it
    under stale-momentum noise.
    """
    shuffle_seed = _derived_seed(config.seed, 7)
    chosen: list[int] = []
    updates: list[ClientModelUpdate] = []
    for i, exp in enumerate(experiences):
        if config.task_incremental and exp.true_concept in task_maps[i]:
            k_star = task_maps[i][exp.true_concept]
        else:
            k_star = client_concept_match(models, exp.batch)
            if config.task_incremental:
                task_maps[i][exp.true_concept] = k_star
        opt = OptimizerState.fresh(config.layer_shape.parameter_count,
                                   config.learning_rate, config.beta1,
                                   config.beta2, config.adam_epsilon)
        w, _ = mc.train(models[k_star], exp.batch, opt, config.epochs,
                        config.minibatch_size, config.patience,
                        config.holdout_fraction,
                        seed=shuffle_seed)
        chosen.append(k_star)
        updates.append(ClientModelUpdate(i, w, len(exp.batch)))
    return chosen, updates


def _make_world(config: RunConfig):
    datasets = make_concepts(config.n_concepts_true, config.classes_per_concept,
                             config.input_dim, config.separation,
                             seed=config.seed,
                             samples_per_class=config.samples_per_class,
                             std=config.concept_std)
    streams = partition_to_clients(datasets, config.n_clients, seed=config.seed,
                                   window_size=config.window_size)
    return datasets, streams


def run_cm(config: RunConfig) -> RunSummary:
    """The clustered, matched training loop over `config.rounds` rounds."""
    config.validate()
    if config.mode != "cm":
        raise ValueError("run_cm requires mode='cm'")
    datasets, streams = _make_world(config)
    concept_set = ConceptModelSet.initialize(config.layer_shape,
                                             config.n_concepts_configured,
                                             seed=config.seed)
    task_maps: list[dict[int, int]] = [dict() for _ in range(config.n_clients)]
    attribution = _Attribution(config.n_concepts_true, config.n_concepts_configured)

    reports = []
    for t in range(1, config.rounds + 1):
        experiences = [next_experience(s, t) for s in streams]
        chosen, updates = _client_round(config, concept_set.models, experiences,
                                        task_maps, t)
        points = [u.weights for u in updates]
        result = _cluster(config, points, t)
        clusters = [fedavg([u for u, lab in zip(updates, result.labels) if lab == j],
                           cluster_id=j)
                    for j in range(result.cluster_count)]
        outcome = server_concept_match(concept_set, clusters, config.distance_metric)
        cluster_concepts = {a.cluster_id: a.concept_id for a in outcome.assignments}

        true_concepts = [exp.true_concept for exp in experiences]
        flags = round_match_flags(chosen, true_concepts, result.labels, cluster_concepts)
        attribution.record(flags)
        round_ari = cl.ari(result.labels, true_concepts)
        accs, weighted = _evaluate(
            config, datasets,
            lambda c: concept_set.models[attribution.model_for(c)])
        reports.append(RoundReport(t, accs, weighted, round_ari,
                                   result.cluster_count, flags, outcome.assignments))

    return _summarize(config, "cm", reports)


def run_vanilla(config: RunConfig) -> RunSummary:
    """Single-global-model FedAvg baseline on the same streams."""
    config.validate()
    if config.mode != "vanilla":
        raise ValueError("run_vanilla requires mode='vanilla'")
    datasets, streams = _make_world(config)
    global_model = ConceptModelSet.initialize(config.layer_shape, 1,
                                              seed=config.seed).models[0]

    reports = []
    for t in range(1, config.rounds + 1):
        experiences = [next_experience(s, t) for s in streams]
        _, updates = _client_round(config, [global_model], experiences,
                                   [dict() for _ in range(config.n_clients)], t)
        global_model = fedavg(updates).weights
        accs, weighted = _evaluate(config, datasets, lambda c: global_model)
        reports.append(RoundReport(t, accs, weighted, None, None, (), None))

    return _summarize(config, "vanilla", reports)


def run(config: RunConfig) -> RunSummary:
    return run_cm(config) if config.mode == "cm" else run_vanilla(config)


def concept_matching_accuracy(reports) -> float:
    """Correct client matchings over all matchings across the given rounds."""
    reports = list(reports)
    if any(r.ari is None for r in reports):
        raise ValueError("concept matching accuracy is defined for cm-mode reports only")
    total = sum(len(r.client_matches) for r in reports)
    if total == 0:
        raise ValueError("no matchings recorded")
    correct = sum(flag.correct for r in reports for flag in r.client_matches)
    return correct / total


def _summarize(config: RunConfig, mode: str, reports: list[RoundReport]) -> RunSummary:
    last = reports[-1]
    if mode == "cm":
        aris = np.array([r.ari for r in reports])
        mean_ari = float(aris.mean())
        min_ari = float(aris.min())
        perfect = int((aris >= 1.0 - 1e-12).sum())
        match_acc = concept_matching_accuracy(reports)
    else:
        mean_ari = min_ari = match_acc = None
        perfect = None
    return RunSummary(mode, config, tuple(reports),
                      last.per_concept_accuracy, last.weighted_avg_accuracy,
                      mean_ari, min_ari, perfect, match_acc)
