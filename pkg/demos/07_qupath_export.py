"""Export predictions for a pathology viewer: GeoJSON, heatmaps, overlay.

Each predicted tile becomes one rectangle feature in base-level pixel
coordinates with the viewer's classification property; heatmaps are
per-class probability images at tile resolution.

    python3 demos/07_qupath_export.py
"""

import json
from pathlib import Path

from histoloop.annotation import AnnotationSession
from histoloop.classifier import TrainConfig, build_feature_table, predict_map, train
from histoloop.embedder import BaselineTextureBackend, embed_batch
from histoloop.label_store import LabeledDataset, split_by_slide
from histoloop.store import ProjectPaths
from histoloop.synth import ScriptedAnnotator, make_cohort, make_slide
from histoloop.tiler import build_tile_grid, extract_patches
from histoloop.viz import export_geojson, save_geojson, save_heatmaps, save_overlay

out = ProjectPaths(Path("demo-output") / "07_export")
backend = BaselineTextureBackend()

slides = make_cohort(4, rows=8, cols=8, tile_size=64, seed=70)
embeddings, labeled = {}, []
for slide in slides:
    grid = build_tile_grid(slide.source.ref, tile_size_px=64, working_mpp=1.0)
    patches = [r.patch for r in extract_patches(slide.source, grid)
               if not r.is_background]
    embeddings[slide.slide_id] = embed_batch(backend, patches)
    session = AnnotationSession(embeddings[slide.slide_id], k=16, seed=0)
    labeled.append(ScriptedAnnotator(slide.truth).run_session(session))
ds = LabeledDataset.from_slides(labeled)
tr, va = split_by_slide(ds, 0.75, seed=0)
model = train(build_feature_table(tr, embeddings),
              build_feature_table(va, embeddings), TrainConfig())

# a slide stored at 0.5 mpp, worked at 1.0 mpp: coordinates scale back 2x
target = make_slide("export-slide", rows=8, cols=8, tile_size=64, seed=71,
                    base_mpp=0.5)
grid = build_tile_grid(target.source.ref, tile_size_px=64, working_mpp=1.0)
patches = [r.patch for r in extract_patches(target.source, grid)
           if not r.is_background]
pmap = predict_map(model, embed_batch(backend, patches), grid.rows, grid.cols)

collection = export_geojson(pmap, grid, target.source.ref)
geo_path = out.geojson_file("export-slide")
save_geojson(collection, geo_path)
print(f"GeoJSON: {len(collection['features'])} features -> {geo_path}")

first = collection["features"][0]
print("first feature:", json.dumps(first["properties"]))
print("  rectangle:", first["geometry"]["coordinates"][0][:3], "... "
      "(base-level pixels, 2x the working coordinates)")

heat_paths = save_heatmaps(pmap, out.exports)
print(f"heatmaps: {len(heat_paths)} class images -> {heat_paths[0].parent}")

overlay_path = save_overlay(target.source, grid, pmap, out.exports, max_dim=512)
print(f"overlay thumbnail -> {overlay_path}")
