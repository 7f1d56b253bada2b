"""Train the six-class patch classifier on annotated slides and predict.

The baseline backend is logistic regression over the 40-dim features:
deterministic, seconds-fast, and accurate on separable textures. Cross
entropy is optimized with the adaptive-moment optimizer; the checkpoint is
the epoch with the least validation loss.

    python3 demos/04_training_and_prediction.py
"""

from pathlib import Path

from histoloop.annotation import AnnotationSession
from histoloop.classifier import (
    TrainConfig,
    build_feature_table,
    evaluate,
    predict_map,
    save_model,
    train,
)
from histoloop.embedder import BaselineTextureBackend, embed_batch
from histoloop.label_store import LabeledDataset, split_by_slide
from histoloop.store import ProjectPaths
from histoloop.synth import ScriptedAnnotator, make_cohort
from histoloop.tiler import build_tile_grid, extract_patches
from histoloop.viz import export_heatmap

out = ProjectPaths(Path("demo-output") / "04_training")
backend = BaselineTextureBackend()

slides = make_cohort(6, rows=10, cols=10, tile_size=64, seed=300, prefix="train")
grids, embeddings, labeled = {}, {}, []
for slide in slides:
    grid = build_tile_grid(slide.source.ref, tile_size_px=64, working_mpp=1.0)
    patches = [r.patch for r in extract_patches(slide.source, grid)
               if not r.is_background]
    grids[slide.slide_id] = grid
    embeddings[slide.slide_id] = embed_batch(backend, patches)
    session = AnnotationSession(embeddings[slide.slide_id], k=16, seed=0)
    labeled.append(ScriptedAnnotator(slide.truth).run_session(session))

dataset = LabeledDataset.from_slides(labeled)
print(f"dataset: {dataset.n_slides} slides, {dataset.n_labeled} labeled patches")
print("class counts:", dataset.class_counts)

train_ds, val_ds = split_by_slide(dataset, train_fraction=0.75, seed=0)
print(f"slide-level split: {train_ds.n_slides} train / {val_ds.n_slides} validation")

model = train(
    build_feature_table(train_ds, embeddings),
    build_feature_table(val_ds, embeddings),
    TrainConfig(max_epochs=150),
)
print(f"best epoch {model.selected_epoch} of {len(model.report['val_loss'])}, "
      f"val loss {model.min_val_loss():.4f}")

result = evaluate(model, build_feature_table(val_ds, embeddings))
print(f"validation accuracy {result['accuracy']:.3f}")
print("per-class recall:", {k: round(v, 3) for k, v in result["per_class_recall"].items()})

save_model(model, out.model_file("demo"))
print(f"artifact saved to {out.model_file('demo')}")

# predict a held-out slide and render one probability heatmap
held_out = make_cohort(1, rows=10, cols=10, tile_size=64, seed=999, prefix="heldout")[0]
grid = build_tile_grid(held_out.source.ref, tile_size_px=64, working_mpp=1.0)
patches = [r.patch for r in extract_patches(held_out.source, grid)
           if not r.is_background]
pmap = predict_map(model, embed_batch(backend, patches), grid.rows, grid.cols)
hits = sum(
    1 for addr, cls in held_out.truth_foreground().items()
    if pmap.argmax_class(addr) == cls
)
print(f"held-out slide: {hits}/{pmap.n_tiles} tiles predicted to the generator truth")
heat = export_heatmap(pmap, "Epithelium")
print(f"epithelium heatmap: {heat.shape} grayscale, max {heat.max()}")
