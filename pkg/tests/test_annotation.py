import itertools

import numpy as np
import pytest

from histoloop.annotation import AnnotationSession, replay_session
from histoloop.errors import EmptyPoolError, ImmutableError, SequencingError

from conftest import blob_embeddings


def ticking_clock(start=1000.0, step=1.0):
    counter = itertools.count()
    return lambda: start + step * next(counter)


def session_with_blobs(n_clusters=4, per_cluster=30, k=4, seed=0):
    embs, truth = blob_embeddings(n_clusters, per_cluster, sigma=0.01, seed=seed)
    session = AnnotationSession(embs, k=k, seed=seed, clock=ticking_clock())
    return session, embs, truth


class TestRoundOne:
    def test_all_labeled_no_discards(self):
        session, embs, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.apply_cluster_label(cid, "Stroma")
        labeled = session.finalize()
        assert labeled.n_discarded == 0
        assert labeled.n_labeled == len(embs)
        assert set(labeled.records.values()) == {"Stroma"}

    def test_label_propagates_to_members(self):
        session, _, _ = session_with_blobs()
        target = session.review_queue[0]
        members = session.assignment_r1.members(target)
        for cid in list(session.review_queue):
            session.apply_cluster_label(cid, "Adipose" if cid == target else "Stroma")
        labeled = session.finalize()
        assert all(labeled.records[a] == "Adipose" for a in members)

    def test_relabel_before_finalize_logged(self):
        session, _, _ = session_with_blobs()
        cid = session.review_queue[0]
        session.apply_cluster_label(cid, "Stroma")
        session.apply_cluster_label(cid, "Adipose")
        for other in list(session.review_queue):
            session.apply_cluster_label(other, "Epithelium")
        labeled = session.finalize()
        members = session.assignment_r1.members(cid)
        assert all(labeled.records[a] == "Adipose" for a in members)
        label_events = [e for e in session.events if e["action"] == "label"
                        and e["cluster"] == cid]
        assert [e["label"] for e in label_events] == ["Stroma", "Adipose"]

    def test_label_after_finalize_rejected(self):
        session, _, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.apply_cluster_label(cid, "Stroma")
        session.finalize()
        with pytest.raises(ImmutableError):
            session.apply_cluster_label(0, "Adipose")

    def test_unknown_class_rejected(self):
        session, _, _ = session_with_blobs()
        with pytest.raises(ValueError):
            session.apply_cluster_label(session.review_queue[0], "Tumor")

    def test_finalize_lists_unreviewed(self):
        session, _, _ = session_with_blobs()
        session.apply_cluster_label(session.review_queue[0], "Stroma")
        with pytest.raises(SequencingError, match=r"unreviewed"):
            session.finalize()

    def test_empty_pool_rejected(self):
        with pytest.raises(EmptyPoolError):
            AnnotationSession([], k=4, seed=0)


class TestRoundTwo:
    def test_hetero_pool_is_union_of_marked(self):
        session, _, _ = session_with_blobs(n_clusters=4, k=4)
        queue = list(session.review_queue)
        marked = queue[:3]
        pool = set()
        for cid in queue:
            if cid in marked:
                pool.update(session.assignment_r1.members(cid))
                session.mark_heterogeneous(cid)
            else:
                session.apply_cluster_label(cid, "Stroma")
        session.recluster_heterogeneous(seed=1)
        assert session.round_index == 2
        assert set(session.assignment_r2.assignment) == pool

    def test_mark_all_pools_everything(self):
        session, embs, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        session.recluster_heterogeneous(seed=1)
        assert len(session.assignment_r2.assignment) == len(embs)

    def test_no_hetero_means_no_round_two(self):
        session, _, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.apply_cluster_label(cid, "Stroma")
        with pytest.raises(SequencingError):
            session.recluster_heterogeneous(seed=1)

    def test_recluster_requires_complete_round(self):
        session, _, _ = session_with_blobs()
        session.mark_heterogeneous(session.review_queue[0])
        with pytest.raises(SequencingError):
            session.recluster_heterogeneous(seed=1)

    def test_finalize_blocked_while_hetero_unresolved(self):
        session, _, _ = session_with_blobs()
        queue = list(session.review_queue)
        session.mark_heterogeneous(queue[0])
        for cid in queue[1:]:
            session.apply_cluster_label(cid, "Stroma")
        with pytest.raises(SequencingError, match="recluster"):
            session.finalize()

    def test_small_pool_reduces_k(self):
        # 4 blobs of 3 points: mark one 3-member cluster heterogeneous
        session, _, _ = session_with_blobs(n_clusters=4, per_cluster=3, k=4)
        queue = list(session.review_queue)
        session.mark_heterogeneous(queue[0])
        for cid in queue[1:]:
            session.apply_cluster_label(cid, "Stroma")
        session.recluster_heterogeneous(seed=1)
        assert session.assignment_r2.k == len(session.assignment_r2.assignment)
        assert session.assignment_r2.requested_k == 4

    def test_round_two_discards(self):
        session, embs, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        session.recluster_heterogeneous(seed=1)
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        labeled = session.finalize()
        assert labeled.n_labeled == 0
        assert labeled.n_discarded == len(embs)

    def test_two_round_bound(self):
        session, _, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        session.recluster_heterogeneous(seed=1)
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        with pytest.raises(SequencingError):
            session.recluster_heterogeneous(seed=2)

    def test_stale_round_decision_rejected(self):
        session, _, _ = session_with_blobs()
        for cid in list(session.review_queue):
            session.mark_heterogeneous(cid)
        session.recluster_heterogeneous(seed=1)
        stale = {"action": "label", "round": 1, "cluster": 0, "label": "Stroma",
                 "actor": "x", "seq": 99, "ts": 0.0}
        with pytest.raises(SequencingError):
            session._apply(stale)


class TestInvariants:
    def test_partition_law(self):
        session, embs, _ = session_with_blobs(n_clusters=5, per_cluster=20, k=8)
        queue = list(session.review_queue)
        for i, cid in enumerate(queue):
            if i % 3 == 0:
                session.mark_heterogeneous(cid)
            else:
                session.apply_cluster_label(cid, "Epithelium")
        if session.heterogeneous_clusters:
            session.recluster_heterogeneous(seed=1)
            for i, cid in enumerate(list(session.review_queue)):
                if i % 2 == 0:
                    session.apply_cluster_label(cid, "Lymphocytes")
                else:
                    session.mark_heterogeneous(cid)
        labeled = session.finalize()
        assert labeled.n_labeled + labeled.n_discarded == len(embs)
        assert set(labeled.records) | labeled.discarded == {e.address for e in embs}

    def test_progress_conservation(self):
        session, _, _ = session_with_blobs(n_clusters=4, k=4)
        total = session.progress()["k"]
        for cid in list(session.review_queue):
            p = session.progress()
            assert p["labeled"] + p["heterogeneous"] + p["unreviewed"] == total
            session.apply_cluster_label(cid, "Stroma")
        p = session.progress()
        assert p["unreviewed"] == 0 and p["labeled"] == total

    def test_discard_warning_above_five_percent(self, caplog):
        session, embs, _ = session_with_blobs()
        with caplog.at_level("WARNING"):
            for cid in list(session.review_queue):
                session.mark_heterogeneous(cid)
            session.recluster_heterogeneous(seed=1)
            for cid in list(session.review_queue):
                session.mark_heterogeneous(cid)
            session.finalize()
        assert any("discarded" in rec.message for rec in caplog.records)


class TestReplay:
    def test_replay_reproduces_labeled_slide_bytes(self):
        session, embs, _ = session_with_blobs(n_clusters=5, per_cluster=20, k=8)
        rng = np.random.default_rng(0)
        for cid in list(session.review_queue):
            if rng.random() < 0.4:
                session.mark_heterogeneous(cid, actor="alice")
            else:
                session.apply_cluster_label(cid, "Adipose", actor="alice")
        if session.heterogeneous_clusters:
            session.recluster_heterogeneous(seed=17, actor="alice")
            for cid in list(session.review_queue):
                session.apply_cluster_label(cid, "Artifact", actor="alice")
        original = session.finalize(actor="alice")

        replayed = replay_session(embs, session.events)
        assert replayed.finalized is not None
        assert replayed.finalized.canonical_json() == original.canonical_json()

    def test_replay_of_partial_log(self):
        session, embs, _ = session_with_blobs()
        done = list(session.review_queue)[:2]
        for cid in done:
            session.apply_cluster_label(cid, "Stroma")
        replayed = replay_session(embs, session.events)
        assert replayed.progress() == session.progress()
        assert replayed.review_queue == session.review_queue

    def test_replay_requires_create_first(self):
        with pytest.raises(SequencingError):
            replay_session([], [{"action": "label"}])
