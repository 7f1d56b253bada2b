"""Two-round cluster-labeling sessions, event-sourced for exact replay.

Round 1 over-clusters the slide's foreground pool; the reviewer labels
homogeneous clusters and marks mixed ones. Marked clusters are pooled and
re-clustered once (round 2); clusters still mixed after round 2 are
discarded at finalize. Every decision is an event; replaying the event log
against the same embeddings reproduces the identical LabeledSlide, because
clustering is deterministic given the logged seeds.
"""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

from .classes import validate_class
from .clustering import DEFAULT_K, ClusterAssignment, cluster_embeddings
from .embedder import Embedding
from .errors import ImmutableError, SequencingError
from .label_store import LabeledSlide

log = logging.getLogger(__name__)

Address = tuple[int, int]

DISCARD_WARN_FRACTION = 0.05


class AnnotationSession:
    """Single-writer review session for one slide.

    Decisions may be revised until the round is sealed (by recluster or
    finalize); every decision and revision is appended to the event log.
    """

    def __init__(
        self,
        embeddings: list[Embedding],
        k: int = DEFAULT_K,
        seed: int = 0,
        session_id: Optional[str] = None,
        actor: str = "anonymous",
        clock: Callable[[], float] = time.time,
    ):
        self._clock = clock
        self.embeddings = list(embeddings)
        self.events: list[dict] = []
        self._seq = 0
        self.finalized: Optional[LabeledSlide] = None
        self._record(
            {
                "action": "create",
                "k": k,
                "seed": seed,
                "session_id": session_id,
                "actor": actor,
            }
        )

    # --- event sourcing -----------------------------------------------------

    def _record(self, payload: dict) -> dict:
        event = dict(payload)
        event.setdefault("actor", "anonymous")
        event["seq"] = self._seq
        event.setdefault("ts", self._clock())
        self._apply(event)
        self.events.append(event)
        self._seq += 1
        return event

    def _apply(self, event: dict) -> None:
        action = event["action"]
        if action == "create":
            self.slide_id = self.embeddings[0].slide_id if self.embeddings else None
            self.session_id = event.get("session_id") or f"session-{self.slide_id}"
            self.annotator = event["actor"]
            self.k = event["k"]
            self.round_index = 1
            self.assignment_r1 = cluster_embeddings(
                self.embeddings, k=event["k"], seed=event["seed"], round_index=1
            )
            self.assignment_r2: Optional[ClusterAssignment] = None
            self.statuses: dict[int, tuple[str, Optional[str]]] = {}
            self.statuses_r1: dict[int, tuple[str, Optional[str]]] = self.statuses
            self.created_ts = event["ts"]
            self.reclustered_ts: Optional[float] = None
        elif action == "label":
            self._check_open(event["cluster"], event["round"])
            self.statuses[event["cluster"]] = ("labeled", validate_class(event["label"]))
        elif action == "heterogeneous":
            self._check_open(event["cluster"], event["round"])
            self.statuses[event["cluster"]] = ("heterogeneous", None)
        elif action == "recluster":
            self._apply_recluster(event)
        elif action == "finalize":
            self._apply_finalize(event)
        else:
            raise ValueError(f"unknown session event action {action!r}")

    def _check_open(self, cluster_id: int, round_index: int) -> None:
        if self.finalized is not None:
            raise ImmutableError("session is finalized")
        if round_index != self.round_index:
            raise SequencingError(
                f"decision targets round {round_index}, session is in "
                f"round {self.round_index}"
            )
        assignment = self.current_assignment
        if not 0 <= cluster_id < assignment.k:
            raise ValueError(f"cluster {cluster_id} outside [0, {assignment.k})")
        if cluster_id not in assignment.nonempty_clusters():
            raise SequencingError(f"cluster {cluster_id} is empty, nothing to review")

    # --- state views ----------------------------------------------------------

    @property
    def current_assignment(self) -> ClusterAssignment:
        return self.assignment_r2 if self.round_index == 2 else self.assignment_r1

    @property
    def review_queue(self) -> list[int]:
        """Unreviewed non-empty clusters of the current round, ascending."""
        return [
            cid
            for cid in self.current_assignment.nonempty_clusters()
            if cid not in self.statuses
        ]

    @property
    def heterogeneous_clusters(self) -> list[int]:
        return sorted(
            cid for cid, (st, _) in self.statuses.items() if st == "heterogeneous"
        )

    def progress(self) -> dict:
        n_labeled = sum(1 for st, _ in self.statuses.values() if st == "labeled")
        n_hetero = len(self.statuses) - n_labeled
        total = len(self.current_assignment.nonempty_clusters())
        return {
            "round": self.round_index,
            "k": total,
            "labeled": n_labeled,
            "heterogeneous": n_hetero,
            "unreviewed": total - len(self.statuses),
            "finalized": self.finalized is not None,
        }

    @property
    def foreground_pool(self) -> list[Address]:
        return sorted(e.address for e in self.embeddings)

    # --- reviewer actions -----------------------------------------------------

    def apply_cluster_label(self, cluster_id: int, label: str, actor: str = "anonymous") -> dict:
        return self._record(
            {
                "action": "label",
                "round": self.round_index,
                "cluster": cluster_id,
                "label": label,
                "actor": actor,
            }
        )

    def mark_heterogeneous(self, cluster_id: int, actor: str = "anonymous") -> dict:
        return self._record(
            {
                "action": "heterogeneous",
                "round": self.round_index,
                "cluster": cluster_id,
                "actor": actor,
            }
        )

    def recluster_heterogeneous(self, seed: int = 1, actor: str = "anonymous") -> dict:
        return self._record({"action": "recluster", "seed": seed, "actor": actor})

    def finalize(self, actor: str = "anonymous") -> LabeledSlide:
        self._record({"action": "finalize", "actor": actor})
        assert self.finalized is not None
        return self.finalized

    # --- transitions ----------------------------------------------------------

    def _apply_recluster(self, event: dict) -> None:
        if self.finalized is not None:
            raise ImmutableError("session is finalized")
        if self.round_index != 1:
            raise SequencingError("re-clustering is allowed once, after round 1")
        if self.review_queue:
            raise SequencingError(
                f"round 1 incomplete; unreviewed clusters {self.review_queue}"
            )
        hetero = self.heterogeneous_clusters
        if not hetero:
            raise SequencingError("no heterogeneous clusters; finalize instead")
        pool_addresses = set()
        for cid in hetero:
            pool_addresses.update(self.assignment_r1.members(cid))
        pool = [e for e in self.embeddings if e.address in pool_addresses]
        self.assignment_r2 = cluster_embeddings(
            pool, k=self.k, seed=event["seed"], round_index=2
        )
        self.statuses_r1 = self.statuses
        self.statuses = {}
        self.round_index = 2
        self.reclustered_ts = event["ts"]

    def _apply_finalize(self, event: dict) -> None:
        if self.finalized is not None:
            raise ImmutableError("session is already finalized")
        if self.review_queue:
            raise SequencingError(
                f"round {self.round_index} incomplete; unreviewed clusters "
                f"{self.review_queue}"
            )
        if self.round_index == 1 and self.heterogeneous_clusters:
            raise SequencingError(
                "heterogeneous clusters present; recluster before finalizing"
            )
        records: dict[Address, str] = {}
        discarded: set[Address] = set()
        for cid, (status, label) in self.statuses_r1.items():
            if status == "labeled":
                for addr in self.assignment_r1.members(cid):
                    records[addr] = label
        if self.round_index == 2:
            for cid, (status, label) in self.statuses.items():
                members = self.assignment_r2.members(cid)
                if status == "labeled":
                    for addr in members:
                        records[addr] = label
                else:
                    discarded.update(members)
        timestamps = {"created": self.created_ts, "finalized": event["ts"]}
        if self.reclustered_ts is not None:
            timestamps["reclustered"] = self.reclustered_ts
        self.finalized = LabeledSlide(
            slide_id=self.slide_id,
            records=records,
            discarded=discarded,
            provenance={
                "session_id": self.session_id,
                "annotator": self.annotator,
                "round_timestamps": timestamps,
            },
        )
        if self.finalized.discard_fraction > DISCARD_WARN_FRACTION:
            log.warning(
                "slide %s: %.1f%% of patches discarded (above the usual <5%%)",
                self.slide_id,
                100 * self.finalized.discard_fraction,
            )


def session_snapshot(session: AnnotationSession) -> dict:
    """Full session state as one JSON-ready document (round states, statuses,
    event log). The append-only journal stays the crash-recovery source; this
    is the human-readable artifact."""
    def status_doc(statuses):
        return {
            str(cid): {"status": st, "label": label}
            for cid, (st, label) in sorted(statuses.items())
        }

    doc = {
        "slide_id": session.slide_id,
        "session_id": session.session_id,
        "annotator": session.annotator,
        "round": session.round_index,
        "progress": session.progress(),
        "statuses_round1": status_doc(session.statuses_r1),
        "events": session.events,
    }
    if session.round_index == 2:
        doc["statuses_round2"] = status_doc(session.statuses)
    if session.finalized is not None:
        doc["labeled_slide"] = session.finalized.to_dict()
    return doc


def replay_session(embeddings: list[Embedding], events: list[dict]) -> AnnotationSession:
    """Rebuild a session from its event log.

    Timestamps and actors come from the log, so a finalized replay yields a
    byte-identical LabeledSlide.
    """
    if not events or events[0]["action"] != "create":
        raise SequencingError("event log must start with a create event")
    session = AnnotationSession.__new__(AnnotationSession)
    session._clock = time.time
    session.embeddings = list(embeddings)
    session.events = []
    session._seq = 0
    session.finalized = None
    for event in events:
        session._apply(event)
        session.events.append(dict(event))
        session._seq = event["seq"] + 1
    return session
