"""Prediction-map exports: QuPath GeoJSON, per-class heatmaps, overlay thumbnails."""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .classes import CLASSES, CLASS_COLORS, validate_class
from .classifier import PredictionMap
from .tiler import SlideRef, TileGrid


def _check_consistent(pmap: PredictionMap, grid: TileGrid, slide: SlideRef | None = None):
    if pmap.slide_id != grid.slide_id:
        raise ValueError(f"prediction map {pmap.slide_id!r} vs grid {grid.slide_id!r}")
    if (pmap.rows, pmap.cols) != (grid.rows, grid.cols):
        raise ValueError("prediction map and grid disagree on dimensions")
    if slide is not None:
        if slide.slide_id != grid.slide_id:
            raise ValueError(f"slide {slide.slide_id!r} vs grid {grid.slide_id!r}")
        if grid.working_mpp < slide.base_mpp:
            raise ValueError("grid working_mpp finer than the slide's stored level")


def export_geojson(
    pmap: PredictionMap,
    grid: TileGrid,
    slide: SlideRef,
    colors: dict[str, tuple[int, int, int]] = CLASS_COLORS,
) -> dict:
    """One axis-aligned rectangle feature per predicted tile, in base-level
    pixel coordinates, carrying the QuPath classification property."""
    _check_consistent(pmap, grid, slide)
    scale_back = grid.working_mpp / slide.base_mpp
    ts = grid.tile_size_px
    features = []
    for (r, c) in sorted(pmap.probabilities):
        cls = pmap.argmax_class((r, c))
        x0, y0 = c * ts * scale_back, r * ts * scale_back
        x1, y1 = (c + 1) * ts * scale_back, (r + 1) * ts * scale_back
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
                },
                "properties": {
                    "objectType": "annotation",
                    "classification": {"name": cls, "color": list(colors[cls])},
                },
            }
        )
    return {
        "type": "FeatureCollection",
        "features": features,
        "properties": {"slide_id": pmap.slide_id},
    }


def serialize_geojson(collection: dict) -> str:
    """Canonical serialization; parse -> reserialize is byte-stable."""
    return json.dumps(collection, sort_keys=True, separators=(",", ":"))


def save_geojson(collection: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_geojson(collection))


def export_heatmap(pmap: PredictionMap, class_name: str) -> np.ndarray:
    """Grayscale rows x cols image of one class's probability, 255 * P
    rounded half-up. Tiles without a prediction stay 0."""
    validate_class(class_name)
    idx = CLASSES.index(class_name)
    out = np.zeros((pmap.rows, pmap.cols), dtype=np.uint8)
    for (r, c), probs in pmap.probabilities.items():
        out[r, c] = int(np.floor(255.0 * probs[idx] + 0.5))
    return out


def export_overlay_thumbnail(
    source,
    grid: TileGrid,
    pmap: PredictionMap,
    max_dim: int = 1024,
    colors: dict[str, tuple[int, int, int]] = CLASS_COLORS,
) -> np.ndarray:
    """Slide thumbnail with predicted tiles tinted at alpha 0.5.

    Output fits in max_dim x max_dim preserving the aspect ratio of the
    grid-covered area. Blending is (pixel + color) / 2, rounded half-up.
    """
    if max_dim < 64:
        raise ValueError("max_dim must be >= 64")
    _check_consistent(pmap, grid, source.ref)
    scale = source.ref.base_mpp / grid.working_mpp
    ts = grid.tile_size_px
    cov_w, cov_h = grid.cols * ts, grid.rows * ts
    image = source.read_region(0, 0, cov_w, cov_h, scale)
    factor = min(max_dim / cov_w, max_dim / cov_h, 1.0)  # never upscale
    thumb_w = max(1, int(cov_w * factor))
    thumb_h = max(1, int(cov_h * factor))
    thumb = cv2.resize(image, (thumb_w, thumb_h), interpolation=cv2.INTER_AREA)

    tint = np.zeros((grid.rows, grid.cols, 3), dtype=np.uint8)
    has_pred = np.zeros((grid.rows, grid.cols), dtype=bool)
    for (r, c) in pmap.probabilities:
        tint[r, c] = colors[pmap.argmax_class((r, c))]
        has_pred[r, c] = True
    tint_up = cv2.resize(tint, (thumb_w, thumb_h), interpolation=cv2.INTER_NEAREST)
    mask_up = (
        cv2.resize(has_pred.astype(np.uint8), (thumb_w, thumb_h),
                   interpolation=cv2.INTER_NEAREST)
        .astype(bool)
    )
    blended = ((thumb.astype(np.uint16) + tint_up.astype(np.uint16) + 1) // 2).astype(np.uint8)
    out = thumb.copy()
    out[mask_up] = blended[mask_up]
    return out


def save_heatmaps(pmap: PredictionMap, out_dir: str | Path) -> list[Path]:
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cls in CLASSES:
        path = out_dir / f"{pmap.slide_id}_{cls}.png"
        Image.fromarray(export_heatmap(pmap, cls)).save(path)
        paths.append(path)
    return paths


def save_overlay(
    source, grid: TileGrid, pmap: PredictionMap, out_dir: str | Path, max_dim: int = 1024
) -> Path:
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{pmap.slide_id}_overlay.png"
    Image.fromarray(export_overlay_thumbnail(source, grid, pmap, max_dim)).save(path)
    return path
