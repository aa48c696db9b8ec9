"""Ability profiling: cumulative per-skill success rates clustered over time.

A student's history is cut into fixed-length intervals (20 attempts by
default). After each completed interval the cumulative success rate on
every skill forms a performance vector; k-means over the training
students' vectors defines the profile clusters. Attempts in the first
interval carry the reserved profile 1, later intervals the label of the
nearest centroid (labels 2..K+1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClusterModel",
    "INITIAL_PROFILE",
    "segment_intervals",
    "performance_vector",
    "interval_vectors",
    "train_clusters",
    "assign_profile",
    "profile_labels",
    "save_centroids",
    "load_centroids",
]

INITIAL_PROFILE = 1


def segment_intervals(n_attempts: int, interval_len: int = 20) -> list[tuple[int, int]]:
    """(start, end) attempt ranges per interval; the last may be partial."""
    if interval_len < 1:
        raise ValueError("interval_len must be >= 1")
    return [(s, min(s + interval_len, n_attempts))
            for s in range(0, n_attempts, interval_len)]


def performance_vector(history, skill_count: int) -> np.ndarray:
    """Cumulative success rate per skill; 0.5 where never attempted.

    ``history`` is an iterable of (skill_dense_index, correct) pairs
    covering intervals 1..z.
    """
    correct = np.zeros(skill_count)
    total = np.zeros(skill_count)
    for skill, outcome in history:
        total[skill] += 1
        correct[skill] += outcome
    vec = np.full(skill_count, 0.5)
    attempted = total > 0
    vec[attempted] = correct[attempted] / total[attempted]
    return vec


def interval_vectors(attempts, skill_count: int, interval_len: int = 20) -> list[np.ndarray]:
    """One cumulative vector per completed interval boundary.

    ``attempts`` is a chronological list of (skill_dense_index, correct)
    pairs for a single student. A student with fewer attempts than one
    full interval contributes nothing.
    """
    correct = np.zeros(skill_count)
    total = np.zeros(skill_count)
    out = []
    for i, (skill, outcome) in enumerate(attempts):
        total[skill] += 1
        correct[skill] += outcome
        if (i + 1) % interval_len == 0:
            vec = np.full(skill_count, 0.5)
            attempted = total > 0
            vec[attempted] = correct[attempted] / total[attempted]
            out.append(vec)
    return out


@dataclass(frozen=True)
class ClusterModel:
    """Fitted centroids, one row per cluster. Immutable and shareable."""

    centroids: np.ndarray

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1] if self.centroids.ndim == 2 else 0


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = rng.choice(n, p=probs)
        else:
            idx = rng.integers(n)
        centroids[i] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    k = len(centroids)
    labels = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = x[mask].mean(axis=0)
            else:
                # revive an empty cluster with the point farthest from
                # its assigned centroid (deterministic)
                worst = int(np.argmax(d2[np.arange(len(x)), labels]))
                centroids[j] = x[worst]
                labels[worst] = j
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    wcss = float(d2[np.arange(len(x)), np.argmin(d2, axis=1)].sum())
    return centroids, wcss


def train_clusters(vectors, k: int = 7, seed: int = 0, restarts: int = 10,
                   max_iter: int = 300) -> ClusterModel:
    """k-means with k-means++ seeding; keeps the lowest-inertia restart.

    Iteration stops when assignments stabilize or after ``max_iter``
    rounds. Fully deterministic for a given seed.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        x = np.atleast_2d(x)
    if len(x) < k:
        raise ValueError(f"need at least {k} vectors to form {k} clusters, have {len(x)}")
    rng = np.random.default_rng(seed)
    best_centroids = None
    best_wcss = np.inf
    for _ in range(restarts):
        centroids, wcss = _lloyd(x, _kmeans_pp_init(x, k, rng), max_iter)
        if wcss < best_wcss:
            best_wcss = wcss
            best_centroids = centroids
    return ClusterModel(centroids=best_centroids)


def assign_profile(vector: np.ndarray, model: ClusterModel,
                   is_first_interval: bool = False) -> int:
    """Profile label for one (student, interval).

    The first interval always gets the reserved label 1; afterwards the
    label is 2 + the index of the nearest centroid (squared Euclidean,
    ties to the lowest index), giving K+1 possible labels in total.
    """
    if is_first_interval:
        return INITIAL_PROFILE
    if model.k == 0:
        return INITIAL_PROFILE
    vector = np.asarray(vector, dtype=float)
    if vector.shape[0] != model.dim:
        raise ValueError(f"vector has dimension {vector.shape[0]}, centroids have {model.dim}")
    d2 = ((model.centroids - vector) ** 2).sum(axis=1)
    return INITIAL_PROFILE + 1 + int(np.argmin(d2))


def profile_labels(attempts, model: ClusterModel, skill_count: int,
                   interval_len: int = 20) -> np.ndarray:
    """Per-attempt profile label for one student.

    The label for interval z is computed from attempts in intervals
    1..z-1 only, so it is fixed before any attempt of interval z is
    observed.
    """
    n = len(attempts)
    labels = np.empty(n, dtype=int)
    correct = np.zeros(skill_count)
    total = np.zeros(skill_count)
    current = INITIAL_PROFILE
    for i, (skill, outcome) in enumerate(attempts):
        if i > 0 and i % interval_len == 0:
            vec = np.full(skill_count, 0.5)
            attempted = total > 0
            vec[attempted] = correct[attempted] / total[attempted]
            current = assign_profile(vec, model, is_first_interval=False)
        labels[i] = current
        total[skill] += 1
        correct[skill] += outcome
    return labels


def save_centroids(model: ClusterModel, path: str) -> None:
    """K rows by n-skills matrix, 6-decimal, tab-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in model.centroids:
            fh.write("\t".join(f"{v:.6f}" for v in row) + "\n")


def load_centroids(path: str) -> ClusterModel:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.split("\t")])
    return ClusterModel(centroids=np.array(rows))
