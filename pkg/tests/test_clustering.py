import numpy as np
import pytest

from histoloop.clustering import (
    ClusterAssignment,
    _assign,
    cluster_embeddings,
    kmeans,
    sample_cluster_grid,
)
from histoloop.embedder import Embedding
from histoloop.errors import EmptyPoolError

from conftest import blob_embeddings


def purity(assignment: ClusterAssignment, truth: dict) -> float:
    hits = 0
    for cid in assignment.nonempty_clusters():
        members = assignment.members(cid)
        counts = {}
        for addr in members:
            counts[truth[addr]] = counts.get(truth[addr], 0) + 1
        hits += max(counts.values())
    return hits / len(assignment.assignment)


class TestKMeans:
    def test_three_tight_blobs_pure(self):
        embs, truth = blob_embeddings(3, 50, sigma=0.01, seed=1)
        assignment = cluster_embeddings(embs, k=3, seed=42)
        assert purity(assignment, truth) == 1.0

    def test_single_point_single_cluster(self):
        emb = [Embedding("s", 0, 0, np.arange(40, dtype=float))]
        assignment = cluster_embeddings(emb, k=1, seed=0)
        assert assignment.assignment == {(0, 0): 0}
        np.testing.assert_array_equal(assignment.centroids[0], np.arange(40.0))

    def test_deterministic_given_seed(self):
        embs, _ = blob_embeddings(4, 30, sigma=0.1, seed=2)
        a = cluster_embeddings(embs, k=4, seed=7)
        b = cluster_embeddings(embs, k=4, seed=7)
        assert a.assignment == b.assignment
        np.testing.assert_array_equal(a.centroids, b.centroids)
        assert a.inertia_history == b.inertia_history

    def test_input_order_irrelevant(self):
        embs, _ = blob_embeddings(3, 20, sigma=0.1, seed=3)
        rng = np.random.default_rng(0)
        shuffled = [embs[i] for i in rng.permutation(len(embs))]
        assert (
            cluster_embeddings(embs, k=3, seed=5).assignment
            == cluster_embeddings(shuffled, k=3, seed=5).assignment
        )

    def test_k_reduced_to_pool_size(self):
        embs, _ = blob_embeddings(1, 5, seed=4)
        assignment = cluster_embeddings(embs, k=32, seed=0)
        assert assignment.k == 5
        assert assignment.requested_k == 32

    def test_empty_pool_rejected(self):
        with pytest.raises(EmptyPoolError):
            cluster_embeddings([], k=32, seed=0)

    def test_inertia_non_increasing_random_sweep(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            X = rng.normal(size=(rng.integers(50, 300), 8))
            _, _, history = kmeans(X, k=int(rng.integers(2, 12)), seed=trial)
            assert len(history) >= 1
            for earlier, later in zip(history, history[1:]):
                assert later <= earlier

    def test_assignment_ties_take_lowest_cluster_id(self):
        X = np.zeros((1, 2))
        centroids = np.array([[1.0, 0.0], [-1.0, 0.0]])
        labels, d2 = _assign(X, centroids)
        assert labels[0] == 0 and d2[0] == 1.0

    def test_labels_consistent_with_centroids(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 6))
        labels, centroids, _ = kmeans(X, k=7, seed=1)
        relabels, _ = _assign(X, centroids)
        np.testing.assert_array_equal(labels, relabels)


class TestGridSample:
    def _assignment(self, n, seed=0):
        embs = [
            Embedding("s", i, 0, np.full(40, float(i % 2)) + np.arange(40) * 1e-6)
            for i in range(n)
        ]
        rng = np.random.default_rng(seed)
        for e in embs:
            e.vector[0] += rng.normal(0, 0.01)
        return cluster_embeddings(embs, k=1, seed=seed)

    def test_cluster_of_100_gives_25_distinct(self):
        assignment = self._assignment(100)
        sample = sample_cluster_grid(assignment, 0, seed=3)
        assert len(sample.addresses) == 25
        assert len(set(sample.addresses)) == 25

    def test_small_cluster_returned_whole(self):
        assignment = self._assignment(7)
        sample = sample_cluster_grid(assignment, 0, seed=3)
        assert sorted(sample.addresses) == [(i, 0) for i in range(7)]

    def test_same_seed_identical_different_seeds_differ(self):
        assignment = self._assignment(100)
        a = sample_cluster_grid(assignment, 0, seed=11)
        b = sample_cluster_grid(assignment, 0, seed=11)
        assert a.addresses == b.addresses
        distinct = {
            sample_cluster_grid(assignment, 0, seed=s).addresses for s in range(100)
        }
        # collisions across 100 seeds on C(100,25) draws would be astonishing
        assert len(distinct) == 100

    def test_members_uniform_without_replacement(self):
        assignment = self._assignment(40)
        sample = sample_cluster_grid(assignment, 0, seed=0)
        members = set(assignment.members(0))
        assert set(sample.addresses) <= members
        assert len(set(sample.addresses)) == len(sample.addresses)

    def test_invalid_cluster_id(self):
        assignment = self._assignment(5)
        with pytest.raises(ValueError):
            sample_cluster_grid(assignment, 9, seed=0)
