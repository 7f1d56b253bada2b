"""Seeded k-means over patch embeddings, plus 5x5 review-grid sampling.

The Lloyd loop is written out here (rather than delegated to a library)
so that sessions are exactly replayable: k-means++ seeding from an explicit
RNG, nearest-centroid ties broken by lowest cluster id, and the
within-cluster sum of squares recorded after every assignment pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedder import Embedding
from .errors import EmptyPoolError

DEFAULT_K = 32
GRID_SAMPLE_SIZE = 25
LLOYD_TOL = 1e-4
LLOYD_MAX_ITER = 300

Address = tuple[int, int]


@dataclass
class ClusterAssignment:
    slide_id: str
    round_index: int
    k: int                      # effective cluster count (may be < requested)
    requested_k: int
    assignment: dict[Address, int]
    centroids: np.ndarray       # k x dim
    seed: int
    inertia_history: list[float] = field(default_factory=list)

    def members(self, cluster_id: int) -> list[Address]:
        if not 0 <= cluster_id < self.k:
            raise ValueError(f"cluster id {cluster_id} outside [0, {self.k})")
        return sorted(a for a, cid in self.assignment.items() if cid == cluster_id)

    def cluster_sizes(self) -> np.ndarray:
        sizes = np.zeros(self.k, dtype=np.int64)
        for cid in self.assignment.values():
            sizes[cid] += 1
        return sizes

    def nonempty_clusters(self) -> list[int]:
        return [int(c) for c in np.nonzero(self.cluster_sizes())[0]]


@dataclass(frozen=True)
class GridSample:
    cluster_id: int
    addresses: tuple[Address, ...]   # up to 25, in 5x5 display order
    sampling_seed: int


def _assign(X: np.ndarray, centroids: np.ndarray, chunk: int = 4096):
    """Nearest centroid per point (ties -> lowest id) and squared distances."""
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    d2min = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        block = X[start : start + chunk]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        labels[start : start + chunk] = idx
        d2min[start : start + chunk] = d2[np.arange(block.shape[0]), idx]
    return labels, d2min


def _update(X: np.ndarray, labels: np.ndarray, old_centroids: np.ndarray) -> np.ndarray:
    k = old_centroids.shape[0]
    sums = np.zeros_like(old_centroids)
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k)
    out = old_centroids.copy()   # empty clusters keep their previous centroid
    has_members = counts > 0
    out[has_members] = sums[has_members] / counts[has_members, None]
    return out


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, tol: float, max_iter: int):
    centroids = _kmeans_pp_init(X, k, rng)
    inertia_history: list[float] = []
    prev_labels = None
    stable = False
    for _ in range(max_iter):
        labels, d2min = _assign(X, centroids)
        inertia_history.append(float(d2min.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            stable = True
            break
        prev_labels = labels
        new_centroids = _update(X, labels, centroids)
        shift = float(((new_centroids - centroids) ** 2).sum())
        centroids = new_centroids
        if shift <= tol:
            break
    if not stable:
        labels, d2min = _assign(X, centroids)
        inertia_history.append(float(d2min.sum()))
    return labels, centroids, inertia_history


def kmeans(
    X: np.ndarray,
    k: int,
    seed: int,
    tol: float = LLOYD_TOL,
    max_iter: int = LLOYD_MAX_ITER,
    n_init: int = 10,
):
    """k-means++ / Lloyd with best-of-n_init restarts (lowest final objective
    wins, ties to the earliest run), all derived deterministically from the
    one seed.

    Returns (labels, centroids, inertia_history); labels are consistent with
    the returned centroids, and inertia_history holds the winning run's
    objective after every assignment pass.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyPoolError("kmeans needs a non-empty 2-D matrix")
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} invalid for {X.shape[0]} points")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    best = None
    for child_seed in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.default_rng(child_seed)
        labels, centroids, history = _lloyd(X, k, rng, tol, max_iter)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centroids, history)
    return best


def cluster_embeddings(
    embeddings: list[Embedding],
    k: int = DEFAULT_K,
    seed: int = 0,
    round_index: int = 1,
) -> ClusterAssignment:
    """Over-cluster one slide's embedding pool.

    Deterministic given the seed: the pool is sorted row-major by tile
    address before clustering, so the caller's ordering is irrelevant.
    If the pool is smaller than k, k is reduced to the pool size (the
    request is kept on the assignment record).
    """
    if not embeddings:
        raise EmptyPoolError("no embeddings to cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(embeddings, key=lambda e: e.address)
    slide_ids = {e.slide_id for e in ordered}
    if len(slide_ids) != 1:
        raise ValueError(f"embeddings from multiple slides: {sorted(slide_ids)}")
    X = np.stack([e.vector for e in ordered])
    effective_k = min(k, len(ordered))
    labels, centroids, history = kmeans(X, effective_k, seed)
    assignment = {e.address: int(lbl) for e, lbl in zip(ordered, labels)}
    return ClusterAssignment(
        slide_id=ordered[0].slide_id,
        round_index=round_index,
        k=effective_k,
        requested_k=k,
        assignment=assignment,
        centroids=centroids,
        seed=seed,
        inertia_history=history,
    )


def sample_cluster_grid(
    assignment: ClusterAssignment, cluster_id: int, seed: int
) -> GridSample:
    """Sample up to 25 member tiles uniformly without replacement.

    Clusters smaller than 25 are returned whole; an empty cluster yields an
    empty sample (the review queue skips those).
    """
    members = assignment.members(cluster_id)
    rng = np.random.default_rng(seed)
    take = min(GRID_SAMPLE_SIZE, len(members))
    if take:
        picked = rng.choice(len(members), size=take, replace=False)
        addresses = tuple(members[i] for i in picked)
    else:
        addresses = ()
    return GridSample(cluster_id=cluster_id, addresses=addresses, sampling_seed=seed)
