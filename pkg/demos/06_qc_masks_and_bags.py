"""Quality control: foreground masks, Dice scoring, and MIL bag filtering.

A foreground mask zeroes white-filtered and artifact-predicted tiles. Bag
manifests implement the three pre-filtering strategies for weakly
supervised learning: All, QC (drop artifacts), QCFat- (drop artifacts and
adipose).

    python3 demos/06_qc_masks_and_bags.py
"""

from pathlib import Path

import numpy as np

from histoloop.annotation import AnnotationSession
from histoloop.classifier import TrainConfig, build_feature_table, predict_map, train
from histoloop.embedder import BaselineTextureBackend, embed_batch
from histoloop.label_store import LabeledDataset, split_by_slide
from histoloop.qc import (
    ForegroundMask,
    dice,
    evaluate_qc,
    filter_bag,
    predictions_to_foreground_mask,
    save_bag_manifest,
    save_mask,
)
from histoloop.store import ProjectPaths
from histoloop.synth import ScriptedAnnotator, make_cohort, make_slide
from histoloop.tiler import build_tile_grid, extract_patches

out = ProjectPaths(Path("demo-output") / "06_qc")
backend = BaselineTextureBackend()

# quick model from 4 annotated slides
slides = make_cohort(4, rows=10, cols=10, tile_size=64, seed=60)
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

# predict a fresh slide and derive its QC mask
target = make_slide("qc-slide", rows=10, cols=10, tile_size=64, seed=99)
grid = build_tile_grid(target.source.ref, tile_size_px=64, working_mpp=1.0)
patches = [r.patch for r in extract_patches(target.source, grid)
           if not r.is_background]
pmap = predict_map(model, embed_batch(backend, patches), grid.rows, grid.cols)

mask = predictions_to_foreground_mask(pmap, grid)
print(f"foreground mask: {int(mask.values.sum())}/{mask.values.size} tiles kept")
save_mask(mask, out.masks)

# ground truth from the generator: tissue that is neither white nor artifact
truth_values = np.zeros((grid.rows, grid.cols), dtype=np.uint8)
for addr, cls in target.truth.items():
    truth_values[addr] = 0 if cls in ("White", "Artifact") else 1
truth_mask = ForegroundMask("qc-slide", truth_values, grid.working_mpp)
print(f"Dice vs generator truth: {dice(mask, truth_mask):.4f}")

# a deliberately sloppy comparator (keeps everything non-white)
sloppy = ForegroundMask("qc-slide", (~grid.background_flags).astype(np.uint8),
                        grid.working_mpp)
report = evaluate_qc([mask], [truth_mask], comparator=[sloppy])
comp = report["comparator"]
print(f"mean Dice {report['mean_dice']:.4f} vs comparator {comp['mean_dice']:.4f} "
      f"({comp['wins']} wins / {comp['losses']} losses / {comp['ties']} ties)")

# MIL bag strategies
for strategy in ("All", "QC", "QCFat-"):
    bag = filter_bag(pmap, strategy)
    save_bag_manifest(bag, out.bags)
    print(f"bag [{strategy:6s}]: {len(bag.included):3d} tiles kept, "
          f"excluded {bag.excluded_counts}")
