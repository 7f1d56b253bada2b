"""Data-root layout shared by the CLI, the service, and the demos.

One project directory holds everything a slide cohort produces:

    grids/<slide>.json                     tile-grid manifests
    patches/<slide>/<slide>__r{r}_c{c}.png foreground patch images
    embeddings/<slide>.npy + .index.json   feature matrices
    sessions/<slide>.events.jsonl          annotation journals
    sessions/<slide>.labeled.json          finalized per-slide labels
    datasets/                              merged labels.jsonl + dataset.json
    models/<name>.zip                      classifier artifacts
    predictions/<slide>.jsonl              prediction maps
    masks/, bags/, exports/                QC and viewer outputs
    rounds/journal.jsonl + current.json    active-loop state
"""

from __future__ import annotations

import json
from pathlib import Path


class ProjectPaths:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def grids(self) -> Path:
        return self._dir("grids")

    @property
    def patches(self) -> Path:
        return self._dir("patches")

    @property
    def embeddings(self) -> Path:
        return self._dir("embeddings")

    @property
    def sessions(self) -> Path:
        return self._dir("sessions")

    @property
    def datasets(self) -> Path:
        return self._dir("datasets")

    @property
    def models(self) -> Path:
        return self._dir("models")

    @property
    def predictions(self) -> Path:
        return self._dir("predictions")

    @property
    def masks(self) -> Path:
        return self._dir("masks")

    @property
    def bags(self) -> Path:
        return self._dir("bags")

    @property
    def exports(self) -> Path:
        return self._dir("exports")

    @property
    def rounds(self) -> Path:
        return self._dir("rounds")

    # per-slide files ---------------------------------------------------------

    def grid_manifest(self, slide_id: str) -> Path:
        return self.grids / f"{slide_id}.json"

    def patch_dir(self, slide_id: str) -> Path:
        return self.patches / slide_id

    def session_journal(self, slide_id: str) -> Path:
        return self.sessions / f"{slide_id}.events.jsonl"

    def session_file(self, slide_id: str) -> Path:
        return self.sessions / f"{slide_id}.session.json"

    def labeled_slide(self, slide_id: str) -> Path:
        return self.sessions / f"{slide_id}.labeled.json"

    def model_file(self, name: str) -> Path:
        return self.models / f"{name}.zip"

    def prediction_file(self, slide_id: str) -> Path:
        return self.predictions / f"{slide_id}.jsonl"

    def overlay_file(self, slide_id: str) -> Path:
        return self.exports / f"{slide_id}_overlay.png"

    def geojson_file(self, slide_id: str) -> Path:
        return self.exports / f"{slide_id}.geojson"

    def round_journal(self) -> Path:
        return self.rounds / "journal.jsonl"

    def round_state(self) -> Path:
        return self.rounds / "current.json"

    def round_reports(self) -> Path:
        return self.rounds / "reports.json"

    def has_grid(self, slide_id: str) -> bool:
        return self.grid_manifest(slide_id).exists()

    def has_embeddings(self, slide_id: str) -> bool:
        return (self.embeddings / f"{slide_id}.npy").exists()

    def list_embedded_slides(self) -> list[str]:
        return sorted(p.stem for p in self.embeddings.glob("*.npy"))


def append_jsonl(path: Path, record: dict, fsync: bool = False) -> None:
    """Append one JSON line; with fsync=True the write is durable before return."""
    import os

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        if fsync:
            os.fsync(fh.fileno())


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
