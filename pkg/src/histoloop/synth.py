"""Synthetic slides and a scripted reviewer for desk-scale runs.

Real WSIs are gigabytes behind access agreements; these procedural textures
stand in for the six tissue classes (plus white background) so demos and
tests can exercise the full pipeline end to end. The scripted annotator
plays the human: it labels a sampled grid when at least 24 of 25 tiles share
a class, and marks it heterogeneous otherwise. That homogeneity bar is a
harness convention, not pipeline logic.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .annotation import AnnotationSession
from .classes import CLASSES
from .clustering import sample_cluster_grid
from .label_store import LabeledSlide
from .tiler import ArraySlide, SlideRef

WHITE = "White"
HOMOGENEITY_BAR = 24 / 25


def _epithelium(size: int, rng: np.random.Generator) -> np.ndarray:
    tile = np.full((size, size, 3), (225, 185, 200), dtype=np.uint8)
    n = max(6, (size // 12) ** 2 // 2)
    for _ in range(n):
        center = (int(rng.integers(size)), int(rng.integers(size)))
        radius = int(rng.integers(max(2, size // 24), max(3, size // 14)))
        shade = int(rng.integers(-25, 26))
        color = (120 + shade, 60 + shade, 135 + shade)
        cv2.circle(tile, center, radius, color, -1)
    return tile


def _stroma(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    period = size / rng.uniform(2.0, 4.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    base = np.array([235, 200, 215], dtype=np.float64)
    tile = base[None, None, :] + wave[:, :, None] * 14.0
    return np.clip(tile, 0, 255).astype(np.uint8)


def _lymphocytes(size: int, rng: np.random.Generator) -> np.ndarray:
    tile = np.full((size, size, 3), (210, 205, 228), dtype=np.uint8)
    n = max(20, (size // 5) ** 2 // 2)
    for _ in range(n):
        center = (int(rng.integers(size)), int(rng.integers(size)))
        radius = max(1, int(rng.integers(1, max(2, size // 36))))
        cv2.circle(tile, center, radius, (40, 40, 115), -1)
    return tile


def _adipose(size: int, rng: np.random.Generator) -> np.ndarray:
    tile = np.full((size, size, 3), (246, 243, 246), dtype=np.uint8)
    cell = max(6, size // 5)
    thickness = max(1, size // 32)
    for cy in range(0, size + cell, cell):
        for cx in range(0, size + cell, cell):
            center = (cx + int(rng.integers(-cell // 3, cell // 3 + 1)),
                      cy + int(rng.integers(-cell // 3, cell // 3 + 1)))
            radius = int(cell * rng.uniform(0.45, 0.7))
            cv2.circle(tile, center, radius, (168, 160, 170), thickness)
    return tile


def _artifact(size: int, rng: np.random.Generator) -> np.ndarray:
    noise = rng.integers(120, 200, size=(size, size, 3)).astype(np.uint8)
    k = (size // 4) | 1
    tile = cv2.GaussianBlur(noise, (k, k), 0)
    for _ in range(3):
        p0 = (int(rng.integers(size)), int(rng.integers(size)))
        p1 = (int(rng.integers(size)), int(rng.integers(size)))
        cv2.line(tile, p0, p1, (35, 30, 45), max(2, size // 10))
    return tile


def _miscellaneous(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(90, 175, size=(size, size, 3)).astype(np.uint8)


def _white(size: int, rng: np.random.Generator) -> np.ndarray:
    return np.full((size, size, 3), 245, dtype=np.uint8)


TEXTURES = {
    "Epithelium": _epithelium,
    "Stroma": _stroma,
    "Lymphocytes": _lymphocytes,
    "Adipose": _adipose,
    "Artifact": _artifact,
    "Miscellaneous": _miscellaneous,
    WHITE: _white,
}

# A texture deliberately absent from TEXTURES' class set: used to fake
# out-of-distribution slides in loop demos/tests.
def checkerboard(size: int, rng: np.random.Generator) -> np.ndarray:
    cell = max(2, size // 8)
    yy, xx = np.mgrid[0:size, 0:size]
    checks = (((yy // cell) + (xx // cell)) % 2).astype(np.uint8)
    tile = np.empty((size, size, 3), dtype=np.uint8)
    tile[..., 0] = np.where(checks, 60, 190)
    tile[..., 1] = np.where(checks, 140, 90)
    tile[..., 2] = np.where(checks, 90, 160)
    return tile


def texture_tile(name: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if name == "checker":
        return checkerboard(size, rng)
    return TEXTURES[name](size, rng)


@dataclass
class SyntheticSlide:
    source: ArraySlide
    truth: dict[tuple[int, int], str]    # tile class, WHITE included

    @property
    def slide_id(self) -> str:
        return self.source.ref.slide_id

    def truth_foreground(self) -> dict[tuple[int, int], str]:
        return {a: cls for a, cls in self.truth.items() if cls != WHITE}


def make_slide(
    slide_id: str,
    rows: int = 12,
    cols: int = 12,
    tile_size: int = 64,
    seed: int = 0,
    base_mpp: float = 1.0,
    class_names: tuple[str, ...] = CLASSES,
    white_fraction: float = 0.15,
) -> SyntheticSlide:
    """Render a slide whose tiles are iid draws over class textures + white."""
    rng = np.random.default_rng(seed)
    image = np.empty((rows * tile_size, cols * tile_size, 3), dtype=np.uint8)
    truth = {}
    choices = list(class_names)
    for r in range(rows):
        for c in range(cols):
            if rng.random() < white_fraction:
                name = WHITE
            else:
                name = choices[int(rng.integers(len(choices)))]
            truth[(r, c)] = name
            tile = texture_tile(name, tile_size, rng)
            image[r * tile_size:(r + 1) * tile_size,
                  c * tile_size:(c + 1) * tile_size] = tile
    ref = SlideRef(
        slide_id=slide_id,
        uri=f"synthetic://{slide_id}",
        base_mpp=base_mpp,
        width_px=cols * tile_size,
        height_px=rows * tile_size,
    )
    return SyntheticSlide(source=ArraySlide(ref, image), truth=truth)


def make_cohort(
    n_slides: int,
    rows: int = 12,
    cols: int = 12,
    tile_size: int = 64,
    seed: int = 0,
    prefix: str = "slide",
) -> list[SyntheticSlide]:
    return [
        make_slide(f"{prefix}{i:03d}", rows=rows, cols=cols, tile_size=tile_size,
                   seed=seed + i)
        for i in range(n_slides)
    ]


class ScriptedAnnotator:
    """Replays ground truth as a reviewer: label when the sampled grid is
    (almost) pure, mark heterogeneous otherwise.

    label_map translates generator texture names to taxonomy classes, the
    way a human folds unseen content into the closest class (e.g. the
    checkerboard texture reviewed as Miscellaneous)."""

    def __init__(self, truth: dict[tuple[int, int], str], grid_seed: int = 0,
                 homogeneity: float = HOMOGENEITY_BAR,
                 label_map: dict[str, str] | None = None):
        self.truth = truth
        self.grid_seed = grid_seed
        self.homogeneity = homogeneity
        self.label_map = label_map or {}

    def review_sample(self, addresses) -> str | None:
        """Class name to assign, or None for heterogeneous."""
        labels = [self.truth[a] for a in addresses]
        counts = {}
        for lbl in labels:
            counts[lbl] = counts.get(lbl, 0) + 1
        majority, n = max(sorted(counts.items()), key=lambda kv: kv[1])
        if n / len(labels) >= self.homogeneity:
            return self.label_map.get(majority, majority)
        return None

    def run_session(self, session: AnnotationSession, recluster_seed: int = 1,
                    actor: str = "oracle") -> LabeledSlide:
        """Drive a session to finalize, reclustering once if needed."""
        while True:
            for cid in list(session.review_queue):
                sample = sample_cluster_grid(
                    session.current_assignment, cid, seed=self.grid_seed + cid
                )
                decision = self.review_sample(sample.addresses)
                if decision is None:
                    session.mark_heterogeneous(cid, actor=actor)
                else:
                    session.apply_cluster_label(cid, decision, actor=actor)
            if session.round_index == 1 and session.heterogeneous_clusters:
                session.recluster_heterogeneous(seed=recluster_seed, actor=actor)
                continue
            return session.finalize(actor=actor)
