import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from histoloop.active_loop import RoundState
from histoloop.embedder import BaselineTextureBackend
from histoloop.pipeline import prepare_slide
from histoloop.service import ServiceConfig, create_app
from histoloop.store import ProjectPaths
from histoloop.synth import make_slide


@pytest.fixture
def project(tmp_path):
    """Data root with one prepared synthetic slide (k will be 32)."""
    paths = ProjectPaths(tmp_path)
    slide = make_slide("wsi1", rows=14, cols=14, tile_size=32, seed=5)
    prepare_slide(slide.source, paths, BaselineTextureBackend(),
                  tile_size_px=32, working_mpp=1.0)
    config = ServiceConfig(data_root=str(tmp_path))
    return paths, config, slide


def client_for(config):
    return TestClient(create_app(config))


class TestSessionLifecycle:
    def test_create_returns_queue_of_k(self, project):
        _, config, _ = project
        client = client_for(config)
        resp = client.post("/sessions", json={"slide_id": "wsi1"})
        assert resp.status_code == 201
        body = resp.json()
        assert body["slide_id"] == "wsi1"
        assert body["k"] == 32
        assert body["progress"]["unreviewed"] == body["progress"]["k"]

    def test_duplicate_create_is_idempotent(self, project):
        _, config, _ = project
        client = client_for(config)
        first = client.post("/sessions", json={"slide_id": "wsi1"})
        second = client.post("/sessions", json={"slide_id": "wsi1"})
        assert second.status_code == 200
        assert second.json()["session_id"] == first.json()["session_id"]

    def test_unprepared_slide_is_409(self, project):
        _, config, _ = project
        client = client_for(config)
        resp = client.post("/sessions", json={"slide_id": "ghost"})
        assert resp.status_code == 409
        assert "tile" in resp.json()["detail"]

    def test_next_serves_all_clusters_once(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        seen = []
        for _ in range(32):
            grid = client.get("/sessions/wsi1/next").json()
            assert not grid.get("round_complete")
            seen.append(grid["cluster_id"])
            assert 1 <= len(grid["patch_urls"]) <= 25
            assert all(url.startswith("/patches/wsi1/") for url in grid["patch_urls"])
            resp = client.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"], "decision": "Stroma"},
            )
            assert resp.status_code == 200
        assert len(set(seen)) == 32
        done = client.get("/sessions/wsi1/next").json()
        assert done["round_complete"] and done["transitions"] == ["finalize"]

    def test_patch_urls_resolve_to_images(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        grid = client.get("/sessions/wsi1/next").json()
        resp = client.get(grid["patch_urls"][0])
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"

    def test_hetero_marks_advertise_recluster(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        for _ in range(32):
            grid = client.get("/sessions/wsi1/next").json()
            client.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"], "decision": "heterogeneous"},
            )
        done = client.get("/sessions/wsi1/next").json()
        assert done["transitions"] == ["recluster"]
        resp = client.post("/sessions/wsi1/recluster", json={})
        assert resp.status_code == 200
        assert resp.json()["round"] == 2

    def test_invalid_decision_is_422(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        grid = client.get("/sessions/wsi1/next").json()
        resp = client.post(
            "/sessions/wsi1/review",
            json={"cluster_id": grid["cluster_id"], "decision": "Tumor"},
        )
        assert resp.status_code == 422

    def test_finalize_then_gone(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        for _ in range(32):
            grid = client.get("/sessions/wsi1/next").json()
            client.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"], "decision": "Epithelium"},
            )
        resp = client.post("/sessions/wsi1/finalize")
        assert resp.status_code == 200
        assert resp.json()["n_discarded"] == 0
        assert client.get("/sessions/wsi1/next").status_code == 410
        grid_resp = client.post(
            "/sessions/wsi1/review", json={"cluster_id": 0, "decision": "Stroma"}
        )
        assert grid_resp.status_code == 410

    def test_premature_finalize_is_409(self, project):
        _, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        assert client.post("/sessions/wsi1/finalize").status_code == 409

    def test_idempotent_review_replay(self, project):
        paths, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        grid = client.get("/sessions/wsi1/next").json()
        payload = {
            "cluster_id": grid["cluster_id"],
            "decision": "Adipose",
            "idempotency_key": "k-123",
        }
        first = client.post("/sessions/wsi1/review", json=payload).json()
        again = client.post("/sessions/wsi1/review", json=payload).json()
        assert first["duplicate"] is False
        assert again["duplicate"] is True
        assert again["progress"] == first["progress"]
        events = [
            json.loads(line)
            for line in paths.session_journal("wsi1").read_text().splitlines()
        ]
        assert sum(1 for e in events if e.get("idempotency_key") == "k-123") == 1


class TestDurability:
    def test_restart_restores_acknowledged_reviews(self, project):
        paths, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        decisions = {}
        for i in range(17):
            grid = client.get("/sessions/wsi1/next").json()
            decision = "heterogeneous" if i % 5 == 0 else "Stroma"
            decisions[grid["cluster_id"]] = decision
            resp = client.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"], "decision": decision,
                      "idempotency_key": f"key-{i}"},
            )
            assert resp.status_code == 200
        # hard stop: new process state, nothing shared but the data root
        revived = client_for(config)
        state = revived.get("/sessions/wsi1").json()
        progress = state["progress"]
        assert progress["labeled"] + progress["heterogeneous"] + progress["unreviewed"] == 32
        assert progress["labeled"] == sum(1 for d in decisions.values() if d != "heterogeneous")
        assert progress["heterogeneous"] == sum(1 for d in decisions.values() if d == "heterogeneous")
        # the same 17 clusters are no longer in the queue
        remaining = set()
        for _ in range(32 - 17):
            grid = revived.get("/sessions/wsi1/next").json()
            remaining.add(grid["cluster_id"])
            revived.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"], "decision": "Stroma"},
            )
        assert remaining.isdisjoint(decisions)

    def test_full_session_replays_to_same_labels(self, project):
        paths, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        rng = np.random.default_rng(0)
        classes = ["Epithelium", "Stroma", "Adipose"]
        while True:
            grid = client.get("/sessions/wsi1/next").json()
            if grid.get("round_complete"):
                break
            client.post(
                "/sessions/wsi1/review",
                json={"cluster_id": grid["cluster_id"],
                      "decision": classes[int(rng.integers(3))]},
            )
        summary = client.post("/sessions/wsi1/finalize").json()
        labeled_doc = json.loads(paths.labeled_slide("wsi1").read_text())

        revived = client_for(config)
        again = revived.post("/sessions/wsi1/finalize").json()
        assert again == summary
        revived_session = revived.app.state.sessions.get("wsi1")
        assert json.loads(revived_session.finalized.canonical_json()) == labeled_doc


class TestRoundEndpoints:
    def seed_round(self, paths):
        state = RoundState(
            round_index=1,
            training_slide_ids={"t1"},
            pool_slide_ids={"p1", "p2", "p3"},
        )
        paths.round_state().write_text(json.dumps(state.to_dict()))
        reports = [
            {"slide_id": "p2", "class_fractions": {}, "mean_max_probability": 0.4,
             "overlay_ref": ""},
            {"slide_id": "p1", "class_fractions": {}, "mean_max_probability": 0.6,
             "overlay_ref": ""},
            {"slide_id": "p3", "class_fractions": {}, "mean_max_probability": 0.9,
             "overlay_ref": ""},
        ]
        paths.round_reports().write_text(json.dumps(reports))

    def test_dashboard_requires_applied_model(self, project):
        paths, config, _ = project
        client = client_for(config)
        assert client.get("/rounds/current").status_code == 409
        self.seed_round(paths)
        resp = client.get("/rounds/current")
        assert resp.status_code == 200
        assert [r["slide_id"] for r in resp.json()["reports"]] == ["p2", "p1", "p3"]

    def test_flag_toggle_roundtrip(self, project):
        paths, config, _ = project
        self.seed_round(paths)
        client = client_for(config)
        resp = client.post("/rounds/current/flags",
                           json={"slide_id": "p1", "flagged": True})
        assert resp.status_code == 200
        assert client.get("/rounds/current").json()["flags"] == {"p1": True}
        client.post("/rounds/current/flags", json={"slide_id": "p1", "flagged": False})
        assert client.get("/rounds/current").json()["flags"] == {}

    def test_flag_unknown_slide_is_422(self, project):
        paths, config, _ = project
        self.seed_round(paths)
        client = client_for(config)
        resp = client.post("/rounds/current/flags",
                           json={"slide_id": "t1", "flagged": True})
        assert resp.status_code == 422

    def test_overlay_missing_is_404(self, project):
        _, config, _ = project
        client = client_for(config)
        assert client.get("/slides/p1/overlay.png").status_code == 404


class TestConfig:
    def test_env_overrides_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"data_root": "/from/file", "port": 1111}))
        cfg = ServiceConfig.load(
            cfg_file, env={"HISTOLOOP_DATA_ROOT": "/from/env", "HISTOLOOP_PORT": "2222"}
        )
        assert cfg.data_root == "/from/env"
        assert cfg.port == 2222

    def test_defaults(self):
        cfg = ServiceConfig.load(env={})
        assert cfg.port == 8077 and cfg.k == 32


class TestUiMount:
    def test_ui_served_when_configured(self, project, tmp_path):
        _, config, _ = project
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>console</body></html>")
        config.ui_dir = str(ui)
        client = client_for(config)
        resp = client.get("/ui/")
        assert resp.status_code == 200
        assert "console" in resp.text


class TestSessionSnapshot:
    def test_snapshot_tracks_mutations(self, project):
        paths, config, _ = project
        client = client_for(config)
        client.post("/sessions", json={"slide_id": "wsi1"})
        snap_path = paths.session_file("wsi1")
        assert snap_path.exists()
        first = json.loads(snap_path.read_text())
        assert first["round"] == 1
        assert first["statuses_round1"] == {}
        assert first["events"][0]["action"] == "create"

        grid = client.get("/sessions/wsi1/next").json()
        client.post(
            "/sessions/wsi1/review",
            json={"cluster_id": grid["cluster_id"], "decision": "Adipose"},
        )
        snap = json.loads(snap_path.read_text())
        assert snap["statuses_round1"][str(grid["cluster_id"])] == {
            "status": "labeled", "label": "Adipose"
        }
        assert snap["events"][-1]["action"] == "label"
