"""HTTP API for annotation sessions and round dashboards.

REST over JSON; patch images served as static files. Every mutation is
journaled (with fsync) before it is acknowledged, and all session state is
rebuilt from the journals on restart, so an acknowledged decision survives
a crash. Mutations carry idempotency keys: replaying one changes nothing.

Endpoints:
    POST /sessions                      create (or fetch) a slide's session
    GET  /sessions/{id}/next            next unreviewed 5x5 grid
    POST /sessions/{id}/review          label / mark-heterogeneous a cluster
    POST /sessions/{id}/recluster       pool marked clusters into round 2
    POST /sessions/{id}/finalize        freeze labels, report discards
    GET  /rounds/current                dashboard: ranked reports + flags
    POST /rounds/current/flags          toggle a pool slide's flag
    GET  /slides/{id}/overlay.png       overlay thumbnail
    GET  /patches/...                   static patch images
"""

from __future__ import annotations

import threading
from typing import Optional

from fastapi import FastAPI, Header, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..active_loop import RoundJournal, RoundState, flag_slide, unflag_slide
from ..annotation import AnnotationSession, replay_session, session_snapshot
from ..classes import CLASSES
from ..clustering import sample_cluster_grid
from ..embedder import load_embeddings
from ..errors import ImmutableError, SequencingError
from ..label_store import LabeledSlide
from ..store import ProjectPaths, append_jsonl, read_jsonl
from ..tiler import patch_filename
from .config import ServiceConfig


class CreateSessionRequest(BaseModel):
    slide_id: str
    seed: Optional[int] = None


class ReviewRequest(BaseModel):
    cluster_id: int
    decision: str                      # class name or "heterogeneous"
    idempotency_key: Optional[str] = None


class ReclusterRequest(BaseModel):
    seed: Optional[int] = None
    idempotency_key: Optional[str] = None


class FlagRequest(BaseModel):
    slide_id: str
    flagged: bool


def _grid_sample_seed(round_index: int, cluster_id: int) -> int:
    # stable across restarts so the reviewer sees the same grid again
    return round_index * 100003 + cluster_id


class SessionManager:
    """Loads, creates, and journals annotation sessions for one data root.

    Mutations on one session are serialized through its lock; reads serve
    lock-free snapshots.
    """

    def __init__(self, paths: ProjectPaths, config: ServiceConfig):
        self.paths = paths
        self.config = config
        self._sessions: dict[str, AnnotationSession] = {}
        self._seen_keys: dict[str, dict[str, dict]] = {}
        self._locks: dict[str, threading.Lock] = {}

    def lock(self, slide_id: str) -> threading.Lock:
        return self._locks.setdefault(slide_id, threading.Lock())

    def get(self, slide_id: str) -> AnnotationSession:
        if slide_id in self._sessions:
            return self._sessions[slide_id]
        journal = self.paths.session_journal(slide_id)
        events = read_jsonl(journal)
        if not events:
            raise HTTPException(404, detail=f"no session for slide {slide_id!r}")
        embeddings = load_embeddings(slide_id, self.paths.embeddings)
        session = replay_session(embeddings, events)
        self._sessions[slide_id] = session
        self._seen_keys[slide_id] = {
            e["idempotency_key"]: e for e in events if e.get("idempotency_key")
        }
        return session

    def exists(self, slide_id: str) -> bool:
        return (
            slide_id in self._sessions
            or self.paths.session_journal(slide_id).exists()
        )

    def create(self, slide_id: str, seed: Optional[int], actor: str) -> AnnotationSession:
        if not self.paths.has_grid(slide_id) or not self.paths.has_embeddings(slide_id):
            raise HTTPException(
                409,
                detail=(
                    f"slide {slide_id!r} is not ready: run `histoloop tile` and "
                    f"`histoloop embed` first"
                ),
            )
        embeddings = load_embeddings(slide_id, self.paths.embeddings)
        session = AnnotationSession(
            embeddings,
            k=self.config.k,
            seed=self.config.cluster_seed if seed is None else seed,
            session_id=f"session-{slide_id}",
            actor=actor,
        )
        self._sessions[slide_id] = session
        self._seen_keys[slide_id] = {}
        # the create event is the journal's first record
        self._journal(slide_id, session.events[0])
        self.save_snapshot(slide_id)
        return session

    def _journal(self, slide_id: str, event: dict) -> None:
        append_jsonl(self.paths.session_journal(slide_id), event, fsync=True)

    def seen(self, slide_id: str, key: Optional[str]) -> bool:
        return bool(key) and key in self._seen_keys.get(slide_id, {})

    def record(self, slide_id: str, event: dict, idempotency_key: Optional[str]) -> None:
        if idempotency_key:
            event["idempotency_key"] = idempotency_key
            self._seen_keys.setdefault(slide_id, {})[idempotency_key] = event
        self._journal(slide_id, event)
        self.save_snapshot(slide_id)

    def save_snapshot(self, slide_id: str) -> None:
        import json

        session = self._sessions.get(slide_id)
        if session is not None:
            self.paths.session_file(slide_id).write_text(
                json.dumps(session_snapshot(session), indent=2, sort_keys=True)
            )


class RoundManager:
    def __init__(self, paths: ProjectPaths):
        self.paths = paths
        self.journal = RoundJournal(paths.round_journal())

    def state(self) -> RoundState:
        path = self.paths.round_state()
        if not path.exists():
            raise HTTPException(409, detail="no active round; open one with the CLI")
        import json

        return RoundState.from_dict(json.loads(path.read_text()))

    def save(self, state: RoundState) -> None:
        import json

        self.paths.round_state().write_text(json.dumps(state.to_dict(), indent=2))

    def reports(self) -> list[dict]:
        path = self.paths.round_reports()
        if not path.exists():
            raise HTTPException(
                409, detail="no model has been applied this round; run `histoloop round apply`"
            )
        import json

        return json.loads(path.read_text())


def create_app(config: ServiceConfig) -> FastAPI:
    paths = ProjectPaths(config.data_root)
    app = FastAPI(title="histoloop annotation service", version="0.1.0")
    sessions = SessionManager(paths, config)
    rounds = RoundManager(paths)
    app.state.sessions = sessions
    app.state.paths = paths

    app.mount("/patches", StaticFiles(directory=str(paths.patches)), name="patches")
    if config.ui_dir:
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    def descriptor(session: AnnotationSession) -> dict:
        return {
            "session_id": session.session_id,
            "slide_id": session.slide_id,
            "round": session.round_index,
            "k": session.current_assignment.k,
            "progress": session.progress(),
        }

    @app.post("/sessions")
    def create_session(
        body: CreateSessionRequest,
        x_annotator: str = Header(default="anonymous"),
    ):
        if sessions.exists(body.slide_id):
            return descriptor(sessions.get(body.slide_id))
        session = sessions.create(body.slide_id, body.seed, actor=x_annotator)
        from fastapi.responses import JSONResponse

        return JSONResponse(descriptor(session), status_code=201)

    @app.get("/sessions/{slide_id}/next")
    def next_grid(slide_id: str):
        session = sessions.get(slide_id)
        if session.finalized is not None:
            raise HTTPException(410, detail="session is finalized")
        queue = session.review_queue
        if not queue:
            transitions = (
                ["recluster"]
                if session.round_index == 1 and session.heterogeneous_clusters
                else ["finalize"]
            )
            return {
                "round_complete": True,
                "transitions": transitions,
                "progress": session.progress(),
            }
        cluster_id = queue[0]
        sample = sample_cluster_grid(
            session.current_assignment,
            cluster_id,
            seed=_grid_sample_seed(session.round_index, cluster_id),
        )
        urls = [
            f"/patches/{slide_id}/{patch_filename(slide_id, r, c)}"
            for (r, c) in sample.addresses
        ]
        return {
            "cluster_id": cluster_id,
            "round": session.round_index,
            "patch_urls": urls,
            "grid_side": 5,
            "classes": list(CLASSES),
            "progress": session.progress(),
        }

    @app.post("/sessions/{slide_id}/review")
    def submit_review(
        slide_id: str,
        body: ReviewRequest,
        x_annotator: str = Header(default="anonymous"),
    ):
        session = sessions.get(slide_id)
        if session.finalized is not None:
            raise HTTPException(410, detail="session is finalized")
        if body.decision != "heterogeneous" and body.decision not in CLASSES:
            raise HTTPException(422, detail=f"invalid decision {body.decision!r}")
        with sessions.lock(slide_id):
            if sessions.seen(slide_id, body.idempotency_key):
                return {"ok": True, "duplicate": True, "progress": session.progress()}
            try:
                if body.decision == "heterogeneous":
                    event = session.mark_heterogeneous(body.cluster_id, actor=x_annotator)
                else:
                    event = session.apply_cluster_label(
                        body.cluster_id, body.decision, actor=x_annotator
                    )
            except SequencingError as exc:
                raise HTTPException(409, detail=str(exc))
            except ValueError as exc:
                raise HTTPException(422, detail=str(exc))
            sessions.record(slide_id, event, body.idempotency_key)
            return {"ok": True, "duplicate": False, "progress": session.progress()}

    @app.post("/sessions/{slide_id}/recluster")
    def recluster(
        slide_id: str,
        body: ReclusterRequest,
        x_annotator: str = Header(default="anonymous"),
    ):
        session = sessions.get(slide_id)
        with sessions.lock(slide_id):
            if sessions.seen(slide_id, body.idempotency_key):
                return descriptor(session)
            seed = config.recluster_seed if body.seed is None else body.seed
            try:
                event = session.recluster_heterogeneous(seed=seed, actor=x_annotator)
            except (SequencingError, ImmutableError) as exc:
                raise HTTPException(409, detail=str(exc))
            sessions.record(slide_id, event, body.idempotency_key)
            return descriptor(session)

    @app.post("/sessions/{slide_id}/finalize")
    def finalize(slide_id: str, x_annotator: str = Header(default="anonymous")):
        session = sessions.get(slide_id)
        with sessions.lock(slide_id):
            if session.finalized is not None:
                labeled = session.finalized
            else:
                try:
                    labeled = session.finalize(actor=x_annotator)
                except (SequencingError, ImmutableError) as exc:
                    raise HTTPException(409, detail=str(exc))
                sessions.record(slide_id, session.events[-1], None)
                paths.labeled_slide(slide_id).write_text(
                    labeled.canonical_json().decode()
                )
        return {
            "slide_id": labeled.slide_id,
            "n_labeled": labeled.n_labeled,
            "n_discarded": labeled.n_discarded,
            "discard_fraction": labeled.discard_fraction,
        }

    @app.get("/rounds/current")
    def round_dashboard():
        state = rounds.state()
        reports = rounds.reports()
        return {
            "round_index": state.round_index,
            "status": state.status,
            "training_slide_ids": sorted(state.training_slide_ids),
            "pool_slide_ids": sorted(state.pool_slide_ids),
            "flags": {sid: True for sid in sorted(state.flagged)},
            "reports": reports,
        }

    @app.post("/rounds/current/flags")
    def set_flag(body: FlagRequest, x_annotator: str = Header(default="anonymous")):
        state = rounds.state()
        try:
            if body.flagged:
                flag_slide(state, body.slide_id)
            else:
                unflag_slide(state, body.slide_id)
        except ImmutableError as exc:
            raise HTTPException(409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc))
        rounds.save(state)
        rounds.journal.append(
            "flag" if body.flagged else "unflag",
            slide_id=body.slide_id,
            actor=x_annotator,
        )
        return {"ok": True, "flags": {sid: True for sid in sorted(state.flagged)}}

    @app.get("/slides/{slide_id}/overlay.png")
    def overlay(slide_id: str):
        path = paths.overlay_file(slide_id)
        if not path.exists():
            raise HTTPException(404, detail=f"no overlay for slide {slide_id!r}")
        return FileResponse(str(path), media_type="image/png")

    @app.get("/sessions/{slide_id}")
    def session_state(slide_id: str):
        session = sessions.get(slide_id)
        body = descriptor(session)
        body["statuses"] = {
            str(cid): {"status": status, "label": label}
            for cid, (status, label) in sorted(session.statuses.items())
        }
        return body

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)


def load_finalized_slide(paths: ProjectPaths, slide_id: str) -> LabeledSlide:
    import json

    return LabeledSlide.from_dict(
        json.loads(paths.labeled_slide(slide_id).read_text())
    )
