"""Synthetic concept datasets and per-client drifting data streams.

Each concept owns a disjoint set of class labels, with isotropic Gaussian
inputs per class. Client streams draw one concept per round and serve a
cyclic sliding window over that concept's local chunk. Ground-truth concept
ids ride along on experiences for the evaluation harness only; server- and
client-side learning code never reads them.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .model import Batch

DEFAULT_WINDOW = 320


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: int
    class_ids: tuple[int, ...]
    means: np.ndarray  # (classes, input_dim)
    std: float
    samples_per_class: int


@dataclass(frozen=True)
class ConceptDataset:
    concept_id: int
    class_ids: tuple[int, ...]
    train: Batch
    test: Batch
    validation: Batch


@dataclass
class ClientStream:
    """One client's local chunks, one per concept, with cyclic cursors."""

    client_id: int
    chunks: dict[int, Batch]
    window_size: int = DEFAULT_WINDOW
    round_concept_seed: int = 0
    cursors: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for cid in self.chunks:
            self.cursors.setdefault(cid, 0)


@dataclass(frozen=True)
class Experience:
    client_id: int
    round: int
    batch: Batch
    true_concept: int  # evaluation harness only


def _sample_class_means(n_classes: int, input_dim: int, min_dist: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample class means with pairwise distance >= min_dist."""
    box = min_dist * max(2.0, np.ceil(np.sqrt(n_classes)) + 1.0)
    means: list[np.ndarray] = []
    attempts = 0
    while len(means) < n_classes:
        cand = rng.uniform(0.0, box, size=input_dim)
        if all(np.linalg.norm(cand - m) >= min_dist for m in means):
            means.append(cand)
            attempts = 0
        else:
            attempts += 1
            if attempts > 2000:  # box too tight; grow and keep going
                box *= 1.5
                attempts = 0
    return np.vstack(means)


def _split_sizes(n: int) -> tuple[int, int, int]:
    """7:2:1 split within rounding; remainder goes to validation."""
    n_train = int(round(0.7 * n))
    n_test = int(round(0.2 * n))
    n_val = n - n_train - n_test
    return n_train, n_test, n_val


def make_concepts(k: int, classes_per_concept: int, input_dim: int,
                  separation: float, seed: int, samples_per_class: int = 1000,
                  std: float = 1.0) -> list[ConceptDataset]:
    """Build K concept datasets with disjoint global label sets.

    Class means are spaced at least `separation * std` apart, so `separation`
    directly controls task difficulty. Each class is split 7:2:1 into
    train/test/validation.
    """
    if k < 1 or classes_per_concept < 1 or separation <= 0 or std <= 0:
        raise ValueError("k, classes_per_concept, separation, std must be positive")
    rng = np.random.default_rng([seed, 0xDA7A])
    n_classes = k * classes_per_concept
    means = _sample_class_means(n_classes, input_dim, separation * std, rng)

    datasets = []
    for concept_id in range(k):
        class_ids = tuple(range(concept_id * classes_per_concept,
                                (concept_id + 1) * classes_per_concept))
        splits: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {
            "train": [], "test": [], "validation": []}
        for cls in class_ids:
            x = means[cls] + std * rng.normal(size=(samples_per_class, input_dim))
            y = np.full(samples_per_class, cls, dtype=np.int64)
            n_train, n_test, n_val = _split_sizes(samples_per_class)
            splits["train"].append((x[:n_train], y[:n_train]))
            splits["test"].append((x[n_train:n_train + n_test], y[n_train:n_train + n_test]))
            splits["validation"].append((x[n_train + n_test:], y[n_train + n_test:]))

        def cat(parts):
            xs = np.concatenate([p[0] for p in parts])
            ys = np.concatenate([p[1] for p in parts])
            order = rng.permutation(len(ys))
            return Batch(xs[order], ys[order])

        datasets.append(ConceptDataset(concept_id, class_ids,
                                       train=cat(splits["train"]),
                                       test=cat(splits["test"]),
                                       validation=cat(splits["validation"])))
    return datasets


def partition_to_clients(datasets: list[ConceptDataset], n_clients: int,
                         seed: int, window_size: int = DEFAULT_WINDOW
                         ) -> list[ClientStream]:
    """Split every concept's train set into non-overlapping per-client chunks."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    rng = np.random.default_rng([seed, 0xC117])
    per_client: list[dict[int, Batch]] = [dict() for _ in range(n_clients)]
    for ds in datasets:
        n = len(ds.train)
        if n < n_clients:
            raise ValueError(
                f"concept {ds.concept_id} has {n} train samples for {n_clients} clients")
        # Stratified by class: every chunk holds an equal share of each class,
        # with leftovers steered to the currently smallest chunks so chunk
        # sizes within a concept never differ by more than one sample.
        totals = np.zeros(n_clients, dtype=np.int64)
        parts: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for cls in sorted(set(ds.train.labels.tolist())):
            idx = rng.permutation(np.flatnonzero(ds.train.labels == cls))
            base, rem = divmod(idx.size, n_clients)
            order = rng.permutation(n_clients)
            order = order[np.argsort(totals[order], kind="stable")]
            pos = 0
            for rank, slot in enumerate(order):
                size = base + (1 if rank < rem else 0)
                parts[slot].append(idx[pos:pos + size])
                totals[slot] += size
                pos += size
        for i in range(n_clients):
            # Round-robin interleave of classes, so every chunk of a concept
            # carries the same class-at-position layout (and hence the same
            # minibatch class mix under any shared shuffle).
            queues = [list(a) for a in parts[i]]
            chunk_idx = []
            while any(queues):
                for q in queues:
                    if q:
                        chunk_idx.append(q.pop(0))
            per_client[i][ds.concept_id] = ds.train.take(np.array(chunk_idx))
    return [ClientStream(client_id=i, chunks=per_client[i],
                         window_size=window_size, round_concept_seed=seed)
            for i in range(n_clients)]


def next_experience(stream: ClientStream, round: int) -> Experience:
    """Draw the round's concept and serve the next cyclic window of samples.

    The concept choice is a pure function of (stream seed, client, round);
    only the chosen concept's cursor advances.
    """
    concept_ids = sorted(stream.chunks)
    rng = np.random.default_rng(
        [stream.round_concept_seed, stream.client_id, round, 0xD1CE])
    concept = concept_ids[int(rng.integers(len(concept_ids)))]
    chunk = stream.chunks[concept]
    n = len(chunk)
    window = min(stream.window_size, n)
    start = stream.cursors[concept]
    idx = (start + np.arange(window)) % n
    stream.cursors[concept] = (start + window) % n
    return Experience(stream.client_id, round, chunk.take(idx), concept)


def export_concepts_csv(datasets: list[ConceptDataset], path: str) -> None:
    """One row per sample: features..., label, concept (all splits)."""
    input_dim = datasets[0].train.inputs.shape[1]
    header = [f"x{i}" for i in range(input_dim)] + ["label", "concept"]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ds in datasets:
            for batch in (ds.train, ds.test, ds.validation):
                for x, y in zip(batch.inputs, batch.labels):
                    writer.writerow([format(v, ".10g") for v in x] + [int(y), ds.concept_id])
    os.replace(tmp, path)
