"""High-level operations gluing the modules together over a data root.

These are what the CLI subcommands call; demos and tests use them directly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import tiler, viz
from .active_loop import apply_to_pool, rank_slides_for_review
from .classifier import ModelArtifact, predict_map
from .embedder import EmbedderBackend, Embedding, embed, load_embeddings, save_embeddings
from .store import ProjectPaths
from .tiler import SlideSource, TileGrid

log = logging.getLogger(__name__)


def tile_slide(
    source: SlideSource,
    paths: ProjectPaths,
    tile_size_px: int = tiler.DEFAULT_TILE_SIZE,
    working_mpp: float = tiler.DEFAULT_WORKING_MPP,
    save_patches: bool = True,
) -> tuple[TileGrid, list[tiler.TileRecord]]:
    """Build the grid, extract tiles, persist the manifest and foreground PNGs."""
    grid = tiler.build_tile_grid(source.ref, tile_size_px, working_mpp)
    patch_dir = paths.patch_dir(source.ref.slide_id)
    records = []
    for rec in tiler.extract_patches(source, grid):
        records.append(rec)
        if rec.error is not None:
            log.warning("tile %s unreadable: %s", rec.address, rec.error)
            continue
        if save_patches and not rec.is_background:
            tiler.save_patch(rec.patch, patch_dir)
    tiler.save_grid_manifest(grid, paths.grid_manifest(grid.slide_id))
    return grid, records


def embed_slide(
    slide_id: str,
    paths: ProjectPaths,
    backend: EmbedderBackend,
) -> list[Embedding]:
    """Embed a slide's stored foreground patches and persist the matrix."""
    from PIL import Image

    grid = tiler.load_grid_manifest(paths.grid_manifest(slide_id))
    patch_dir = paths.patch_dir(slide_id)
    embeddings = []
    for (r, c) in grid.foreground_addresses():
        path = patch_dir / tiler.patch_filename(slide_id, r, c)
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"))
        embeddings.append(embed(backend, tiler.Patch(slide_id, r, c, pixels)))
    if embeddings:
        save_embeddings(embeddings, paths.embeddings, backend_name=backend.name)
    else:
        log.warning("slide %s has no foreground patches to embed", slide_id)
    return embeddings


def prepare_slide(
    source: SlideSource,
    paths: ProjectPaths,
    backend: EmbedderBackend,
    tile_size_px: int = tiler.DEFAULT_TILE_SIZE,
    working_mpp: float = tiler.DEFAULT_WORKING_MPP,
) -> tuple[TileGrid, list[Embedding]]:
    """tile + embed in one pass, without re-reading the patch PNGs."""
    grid, records = tile_slide(source, paths, tile_size_px, working_mpp)
    embeddings = [
        embed(backend, rec.patch)
        for rec in records
        if rec.error is None and not rec.is_background
    ]
    if embeddings:
        save_embeddings(embeddings, paths.embeddings, backend_name=backend.name)
    return grid, embeddings


def predict_slide(
    model: ModelArtifact, slide_id: str, paths: ProjectPaths
):
    from .classifier import save_prediction_map

    grid = tiler.load_grid_manifest(paths.grid_manifest(slide_id))
    embeddings = load_embeddings(slide_id, paths.embeddings)
    pmap = predict_map(model, embeddings, grid.rows, grid.cols)
    save_prediction_map(pmap, paths.prediction_file(slide_id))
    return pmap


def apply_round(
    model: ModelArtifact,
    paths: ProjectPaths,
    pool_slide_ids: list[str],
    sources: dict[str, SlideSource] | None = None,
    max_dim: int = 512,
) -> list[dict]:
    """Predict the pool, export overlays where sources are given, rank, and
    persist the dashboard reports."""
    pool = {}
    for slide_id in pool_slide_ids:
        grid = tiler.load_grid_manifest(paths.grid_manifest(slide_id))
        embeddings = load_embeddings(slide_id, paths.embeddings)
        pool[slide_id] = (embeddings, grid.rows, grid.cols)

    pmaps: dict[str, object] = {}

    def exporter(pmap) -> str:
        from .classifier import save_prediction_map

        save_prediction_map(pmap, paths.prediction_file(pmap.slide_id))
        if sources and pmap.slide_id in sources:
            grid = tiler.load_grid_manifest(paths.grid_manifest(pmap.slide_id))
            viz.save_overlay(sources[pmap.slide_id], grid, pmap, paths.exports, max_dim)
            return f"/slides/{pmap.slide_id}/overlay.png"
        return ""

    reports, errors = apply_to_pool(
        model, pool, overlay_exporter=exporter, prediction_sink=pmaps
    )
    for slide_id, message in errors.items():
        log.error("round apply failed for %s: %s", slide_id, message)
    ranked = [r.to_dict() for r in rank_slides_for_review(reports)]
    paths.round_reports().write_text(json.dumps(ranked, indent=2))
    return ranked


def export_slide(
    slide_id: str,
    paths: ProjectPaths,
    source: SlideSource | None = None,
    max_dim: int = 1024,
) -> list[Path]:
    """GeoJSON + heatmaps (+ overlay when pixels are available) for one slide."""
    from .classifier import load_prediction_map

    grid = tiler.load_grid_manifest(paths.grid_manifest(slide_id))
    pmap = load_prediction_map(paths.prediction_file(slide_id))
    written = []
    if source is not None:
        ref = source.ref
    else:
        scale = 1.0
        ref = tiler.SlideRef(
            slide_id=slide_id,
            uri="unknown://",
            base_mpp=grid.working_mpp * scale,
            width_px=grid.cols * grid.tile_size_px,
            height_px=grid.rows * grid.tile_size_px,
        )
    fc = viz.export_geojson(pmap, grid, ref)
    geo_path = paths.geojson_file(slide_id)
    viz.save_geojson(fc, geo_path)
    written.append(geo_path)
    written.extend(viz.save_heatmaps(pmap, paths.exports))
    if source is not None:
        written.append(viz.save_overlay(source, grid, pmap, paths.exports, max_dim))
    return written
