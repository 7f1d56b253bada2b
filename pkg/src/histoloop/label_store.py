"""Persisted patch-label datasets: merge across slides, slide-level splits.

Datasets are immutable snapshots. The on-disk form is a labels.jsonl
manifest (one line per patch, discarded patches kept with a reason) plus a
dataset.json summary.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classes import CLASSES, DISCARDED, validate_class
from .errors import CannotSplitError, MergeConflictError

log = logging.getLogger(__name__)

Address = tuple[int, int]


@dataclass
class LabeledSlide:
    """Final per-slide annotation: every foreground tile labeled or discarded."""

    slide_id: str
    records: dict[Address, str]
    discarded: set[Address]
    provenance: dict

    def __post_init__(self):
        overlap = set(self.records) & self.discarded
        if overlap:
            raise ValueError(f"tiles both labeled and discarded: {sorted(overlap)[:5]}")
        for cls in self.records.values():
            validate_class(cls)

    @property
    def n_labeled(self) -> int:
        return len(self.records)

    @property
    def n_discarded(self) -> int:
        return len(self.discarded)

    @property
    def discard_fraction(self) -> float:
        total = self.n_labeled + self.n_discarded
        return self.n_discarded / total if total else 0.0

    def finalized_at(self) -> float:
        return float(self.provenance["round_timestamps"]["finalized"])

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "records": {f"{r}_{c}": cls for (r, c), cls in sorted(self.records.items())},
            "discarded": [[r, c] for r, c in sorted(self.discarded)],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LabeledSlide":
        records = {}
        for key, label in doc["records"].items():
            r, c = key.split("_")
            records[(int(r), int(c))] = label
        return cls(
            slide_id=doc["slide_id"],
            records=records,
            discarded={(int(r), int(c)) for r, c in doc["discarded"]},
            provenance=doc["provenance"],
        )

    def canonical_json(self) -> bytes:
        """Stable byte serialization used for replay-equality checks."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


@dataclass
class LabeledDataset:
    slides: dict[str, LabeledSlide]
    class_counts: dict[str, int] = field(default_factory=dict)
    supersessions: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_counts:
            self.class_counts = class_histogram(self)

    @classmethod
    def from_slides(cls, slides: list[LabeledSlide]) -> "LabeledDataset":
        by_id = {}
        for s in slides:
            if s.slide_id in by_id:
                raise MergeConflictError(
                    f"duplicate slide {s.slide_id!r}; use merge() to resolve"
                )
            by_id[s.slide_id] = s
        return cls(slides=by_id)

    @classmethod
    def empty(cls) -> "LabeledDataset":
        return cls(slides={})

    @property
    def n_slides(self) -> int:
        return len(self.slides)

    @property
    def n_labeled(self) -> int:
        return sum(s.n_labeled for s in self.slides.values())


def class_histogram(dataset: LabeledDataset) -> dict[str, int]:
    """Recount labeled records per class (discarded tiles excluded)."""
    counts = {cls: 0 for cls in CLASSES}
    for slide in dataset.slides.values():
        for label in slide.records.values():
            counts[label] += 1
    return counts


def merge(datasets: list[LabeledDataset]) -> LabeledDataset:
    """Union of slides; a duplicate slide_id is resolved in favor of the
    latest finalize timestamp, with the supersession logged. Identical
    timestamps cannot be ordered and raise."""
    slides: dict[str, LabeledSlide] = {}
    supersessions: list[dict] = []
    for ds in datasets:
        for slide_id, slide in ds.slides.items():
            if slide_id not in slides:
                slides[slide_id] = slide
                continue
            held = slides[slide_id]
            if slide.finalized_at() == held.finalized_at():
                if slide.canonical_json() == held.canonical_json():
                    continue  # same annotation arriving twice is not a conflict
                raise MergeConflictError(
                    f"slide {slide_id!r} annotated twice with identical "
                    f"timestamps {held.finalized_at()}"
                )
            newer, older = (
                (slide, held) if slide.finalized_at() > held.finalized_at() else (held, slide)
            )
            slides[slide_id] = newer
            event = {
                "slide_id": slide_id,
                "kept_session": newer.provenance.get("session_id"),
                "superseded_session": older.provenance.get("session_id"),
                "kept_finalized_at": newer.finalized_at(),
            }
            supersessions.append(event)
            log.info("merge: slide %s superseded by newer annotation", slide_id)
    merged = LabeledDataset(slides=slides)
    merged.supersessions = supersessions
    return merged


def split_by_slide(
    dataset: LabeledDataset, train_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Slide-granular train/validation split; both sides keep >= 1 slide."""
    if dataset.n_slides < 2:
        raise CannotSplitError("need at least 2 slides for a slide-level split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    ids = sorted(dataset.slides)
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = set(order[:n_train])
    train = LabeledDataset(
        slides={sid: dataset.slides[sid] for sid in ids if sid in train_ids}
    )
    val = LabeledDataset(
        slides={sid: dataset.slides[sid] for sid in ids if sid not in train_ids}
    )
    return train, val


# --- persistence -----------------------------------------------------------

def save_dataset(dataset: LabeledDataset, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "labels.jsonl").open("w") as fh:
        for slide_id in sorted(dataset.slides):
            slide = dataset.slides[slide_id]
            session_id = slide.provenance.get("session_id")
            for (r, c), cls in sorted(slide.records.items()):
                fh.write(
                    json.dumps(
                        {"slide_id": slide_id, "row": r, "col": c,
                         "class": cls, "session_id": session_id},
                        sort_keys=True,
                    )
                    + "\n"
                )
            for r, c in sorted(slide.discarded):
                fh.write(
                    json.dumps(
                        {"slide_id": slide_id, "row": r, "col": c,
                         "class": DISCARDED, "reason": "heterogeneous_round2",
                         "session_id": session_id},
                        sort_keys=True,
                    )
                    + "\n"
                )
    summary = {
        "n_slides": dataset.n_slides,
        "class_counts": dataset.class_counts,
        "n_labeled": dataset.n_labeled,
        "n_discarded": sum(s.n_discarded for s in dataset.slides.values()),
        "provenance": {sid: s.provenance for sid, s in sorted(dataset.slides.items())},
        "supersessions": dataset.supersessions,
    }
    (out_dir / "dataset.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def load_dataset(in_dir: str | Path) -> LabeledDataset:
    in_dir = Path(in_dir)
    summary = json.loads((in_dir / "dataset.json").read_text())
    records: dict[str, dict[Address, str]] = {}
    discarded: dict[str, set[Address]] = {}
    with (in_dir / "labels.jsonl").open() as fh:
        for line in fh:
            rec = json.loads(line)
            sid = rec["slide_id"]
            addr = (rec["row"], rec["col"])
            if rec["class"] == DISCARDED:
                discarded.setdefault(sid, set()).add(addr)
            else:
                records.setdefault(sid, {})[addr] = rec["class"]
    slides = {}
    for sid, prov in summary["provenance"].items():
        slides[sid] = LabeledSlide(
            slide_id=sid,
            records=records.get(sid, {}),
            discarded=discarded.get(sid, set()),
            provenance=prov,
        )
    ds = LabeledDataset(slides=slides)
    ds.supersessions = summary.get("supersessions", [])
    return ds
