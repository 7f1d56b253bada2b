"""Walk the HTTP annotation API end to end (in-process test client).

The browser UI in frontend/ talks to exactly these endpoints. Decisions are
journaled with fsync before they are acknowledged; a second app instance
over the same data root proves the restart/replay path.

    python3 demos/08_annotation_service.py
"""

import tempfile

from fastapi.testclient import TestClient

from histoloop.embedder import BaselineTextureBackend
from histoloop.pipeline import prepare_slide
from histoloop.service import ServiceConfig, create_app
from histoloop.store import ProjectPaths
from histoloop.synth import make_slide

with tempfile.TemporaryDirectory() as root:
    paths = ProjectPaths(root)
    slide = make_slide("api-slide", rows=14, cols=14, tile_size=48, seed=8)
    prepare_slide(slide.source, paths, BaselineTextureBackend(),
                  tile_size_px=48, working_mpp=1.0)
    print(f"prepared {slide.slide_id} in {root}")

    client = TestClient(create_app(ServiceConfig(data_root=root)))

    created = client.post("/sessions", json={"slide_id": "api-slide"}).json()
    print(f"POST /sessions -> round {created['round']}, k={created['k']}")

    # label everything Stroma except every 5th cluster marked heterogeneous
    i = 0
    while True:
        grid = client.get("/sessions/api-slide/next").json()
        if grid.get("round_complete"):
            print(f"round complete; transitions: {grid['transitions']}")
            break
        decision = "heterogeneous" if i % 5 == 0 else "Stroma"
        client.post("/sessions/api-slide/review",
                    json={"cluster_id": grid["cluster_id"], "decision": decision,
                          "idempotency_key": f"demo-{i}"})
        i += 1
    print(f"submitted {i} reviews")

    if "recluster" in grid["transitions"]:
        second = client.post("/sessions/api-slide/recluster", json={}).json()
        print(f"POST /recluster -> round {second['round']}, k={second['k']}")
        while True:
            grid = client.get("/sessions/api-slide/next").json()
            if grid.get("round_complete"):
                break
            client.post("/sessions/api-slide/review",
                        json={"cluster_id": grid["cluster_id"],
                              "decision": "Miscellaneous"})

    summary = client.post("/sessions/api-slide/finalize").json()
    print(f"POST /finalize -> {summary['n_labeled']} labeled, "
          f"{summary['n_discarded']} discarded "
          f"({100 * summary['discard_fraction']:.1f}%)")

    # durability: a brand-new app instance over the same data root
    revived = TestClient(create_app(ServiceConfig(data_root=root)))
    state = revived.get("/sessions/api-slide").json()
    print(f"after restart: finalized={state['progress']['finalized']}, "
          f"round={state['round']} (identical session restored from the journal)")
