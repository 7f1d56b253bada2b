"""Diversity-based expansion rounds over the slide pool.

A round applies the current model to every pool slide, surfaces per-slide
reports (advisory, least-confident first), records the human's flags, and
closes by moving the flagged-and-annotated slides into the training set.
Slide selection itself stays with the human; the ranking only orders the
review work.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .classes import CLASSES
from .classifier import ModelArtifact, PredictionMap, predict_map
from .embedder import Embedding
from .errors import ImmutableError
from .label_store import LabeledSlide

log = logging.getLogger(__name__)


@dataclass
class LoopConfig:
    initial_slides: int = 20
    slides_per_round: int = 10


@dataclass
class SlideReport:
    slide_id: str
    class_fractions: dict[str, float]
    mean_max_probability: float
    overlay_ref: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "class_fractions": self.class_fractions,
            "mean_max_probability": self.mean_max_probability,
            "overlay_ref": self.overlay_ref,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SlideReport":
        return cls(
            slide_id=doc["slide_id"],
            class_fractions=doc["class_fractions"],
            mean_max_probability=doc["mean_max_probability"],
            overlay_ref=doc.get("overlay_ref"),
        )


@dataclass
class RoundState:
    round_index: int
    training_slide_ids: set[str]
    pool_slide_ids: set[str]
    model_ref: Optional[str] = None
    flags: dict[str, bool] = field(default_factory=dict)
    status: str = "open"           # "open" | "closed"

    def __post_init__(self):
        overlap = self.training_slide_ids & self.pool_slide_ids
        if overlap:
            raise ValueError(f"slides in both training set and pool: {sorted(overlap)}")

    @property
    def flagged(self) -> set[str]:
        return {sid for sid, on in self.flags.items() if on}

    def _check_open(self):
        if self.status != "open":
            raise ImmutableError(f"round {self.round_index} is closed")

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "training_slide_ids": sorted(self.training_slide_ids),
            "pool_slide_ids": sorted(self.pool_slide_ids),
            "model_ref": self.model_ref,
            "flags": dict(sorted(self.flags.items())),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RoundState":
        return cls(
            round_index=doc["round_index"],
            training_slide_ids=set(doc["training_slide_ids"]),
            pool_slide_ids=set(doc["pool_slide_ids"]),
            model_ref=doc.get("model_ref"),
            flags=doc.get("flags", {}),
            status=doc.get("status", "open"),
        )


def report_from_prediction_map(
    pmap: PredictionMap, overlay_ref: Optional[str] = None
) -> SlideReport:
    probs = np.stack(list(pmap.probabilities.values()))
    argmax = probs.argmax(axis=1)
    fractions = {
        cls: float((argmax == i).mean()) for i, cls in enumerate(CLASSES)
    }
    return SlideReport(
        slide_id=pmap.slide_id,
        class_fractions=fractions,
        mean_max_probability=float(probs.max(axis=1).mean()),
        overlay_ref=overlay_ref,
    )


def apply_to_pool(
    model: ModelArtifact,
    pool: dict[str, tuple[list[Embedding], int, int]],
    overlay_exporter: Optional[Callable[[PredictionMap], str]] = None,
    prediction_sink: Optional[dict[str, PredictionMap]] = None,
) -> tuple[list[SlideReport], dict[str, str]]:
    """Predict every pool slide; per-slide failures are recorded, not fatal.

    pool maps slide_id -> (embeddings, grid rows, grid cols). Returns
    (reports, errors-by-slide).
    """
    if not pool:
        raise ValueError("pool is empty")
    reports, errors = [], {}
    for slide_id in sorted(pool):
        embeddings, rows, cols = pool[slide_id]
        try:
            pmap = predict_map(model, embeddings, rows, cols)
            overlay_ref = overlay_exporter(pmap) if overlay_exporter else None
            if prediction_sink is not None:
                prediction_sink[slide_id] = pmap
            reports.append(report_from_prediction_map(pmap, overlay_ref))
        except Exception as exc:  # noqa: BLE001 - keep the loop alive per slide
            log.error("pool slide %s failed: %s", slide_id, exc)
            errors[slide_id] = str(exc)
    return reports, errors


def rank_slides_for_review(reports: list[SlideReport]) -> list[SlideReport]:
    """Least-confident first; equal confidences fall back to slide_id order."""
    if not reports:
        raise ValueError("no reports to rank")
    return sorted(reports, key=lambda r: (r.mean_max_probability, r.slide_id))


def flag_slide(state: RoundState, slide_id: str) -> None:
    state._check_open()
    if slide_id not in state.pool_slide_ids:
        raise ValueError(f"slide {slide_id!r} is not in the current pool")
    state.flags[slide_id] = True


def unflag_slide(state: RoundState, slide_id: str) -> None:
    state._check_open()
    if slide_id not in state.pool_slide_ids:
        raise ValueError(f"slide {slide_id!r} is not in the current pool")
    state.flags[slide_id] = False


def close_round(state: RoundState, newly_labeled: list[LabeledSlide]) -> RoundState:
    """Seal the round and fold the flagged, now-annotated slides into training.

    The labeled slides handed in must be exactly the flagged set.
    """
    state._check_open()
    labeled_ids = {s.slide_id for s in newly_labeled}
    flagged = state.flagged
    if labeled_ids != flagged:
        raise ValueError(
            f"labeled slides do not match flags; missing={sorted(flagged - labeled_ids)} "
            f"unexpected={sorted(labeled_ids - flagged)}"
        )
    if not flagged:
        log.info("round %d closed with no flags; training set unchanged", state.round_index)
    state.status = "closed"
    return RoundState(
        round_index=state.round_index + 1,
        training_slide_ids=state.training_slide_ids | flagged,
        pool_slide_ids=state.pool_slide_ids - flagged,
    )


class RoundJournal:
    """Append-only JSONL journal of round events."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, action: str, **payload) -> dict:
        event = {"ts": time.time(), "action": action, **payload}
        with self.path.open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
        return event

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self.path.open() as fh:
            return [json.loads(line) for line in fh if line.strip()]
