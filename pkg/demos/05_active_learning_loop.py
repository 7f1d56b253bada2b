"""Diversity-based expansion: apply the model to the pool, review, grow.

Two pool slides carry an unseen checkerboard texture. The advisory ranking
(least mean max-probability first) surfaces exactly those out-of-distribution
slides; the human flags them, they get annotated (checker reviewed as
Miscellaneous), the round closes, and the retrained model becomes confident
on them. Training sets only ever grow.

    python3 demos/05_active_learning_loop.py
"""

import numpy as np

from histoloop.active_loop import (
    RoundState,
    apply_to_pool,
    close_round,
    flag_slide,
    rank_slides_for_review,
)
from histoloop.annotation import AnnotationSession
from histoloop.classes import CLASSES
from histoloop.classifier import TrainConfig, build_feature_table, predict_map, train
from histoloop.embedder import BaselineTextureBackend, embed_batch
from histoloop.label_store import LabeledDataset, split_by_slide
from histoloop.synth import ScriptedAnnotator, make_slide
from histoloop.tiler import build_tile_grid, extract_patches

backend = BaselineTextureBackend()

slides = {}
for i in range(10):
    slides[f"wsi{i:02d}"] = make_slide(f"wsi{i:02d}", rows=10, cols=10,
                                       tile_size=64, seed=700 + i)
for i in (10, 11):  # out-of-distribution: checkerboard mixed with two knowns
    slides[f"wsi{i:02d}"] = make_slide(
        f"wsi{i:02d}", rows=10, cols=10, tile_size=64, seed=700 + i,
        class_names=("checker", "checker", "Stroma", "Epithelium"),
    )

grids, embeddings = {}, {}
for sid, slide in slides.items():
    grid = build_tile_grid(slide.source.ref, tile_size_px=64, working_mpp=1.0)
    patches = [r.patch for r in extract_patches(slide.source, grid)
               if not r.is_background]
    grids[sid] = grid
    embeddings[sid] = embed_batch(backend, patches)

oracle_map = {"checker": "Miscellaneous"}


def annotate(sid):
    session = AnnotationSession(embeddings[sid], k=16, seed=0)
    return ScriptedAnnotator(slides[sid].truth,
                             label_map=oracle_map).run_session(session)


def fit(ids):
    ds = LabeledDataset.from_slides([annotate(sid) for sid in sorted(ids)])
    tr, va = split_by_slide(ds, 0.75, seed=0)
    return train(build_feature_table(tr, embeddings),
                 build_feature_table(va, embeddings), TrainConfig())


def pool_reports(model, state):
    pool = {sid: (embeddings[sid], grids[sid].rows, grids[sid].cols)
            for sid in sorted(state.pool_slide_ids)}
    reports, _ = apply_to_pool(model, pool)
    return rank_slides_for_review(reports)


all_ids = sorted(slides)
state = RoundState(0, set(all_ids[:4]), set(all_ids[4:]))
model = fit(state.training_slide_ids)

ranked = pool_reports(model, state)
print(f"round 0: training={sorted(state.training_slide_ids)}")
print("pool ranked least-confident first:")
for rep in ranked:
    marker = "  <-- unseen texture" if rep.slide_id in ("wsi10", "wsi11") else ""
    print(f"  {rep.slide_id}: confidence {rep.mean_max_probability:.3f}{marker}")

picks = [r.slide_id for r in ranked[:2]]
print(f"flagging the two least-confident slides: {picks}")
for sid in picks:
    flag_slide(state, sid)
state = close_round(state, [annotate(sid) for sid in picks])
model = fit(state.training_slide_ids)
print(f"round closed; training set grew to {len(state.training_slide_ids)} slides")

# the previously-uncertain slides are now confidently handled
for sid in picks:
    pmap = predict_map(model, embeddings[sid], grids[sid].rows, grids[sid].cols)
    probs = np.stack(list(pmap.probabilities.values()))
    print(f"  {sid} after retraining: confidence {probs.max(axis=1).mean():.3f}")

# held-out accuracy over the six real classes on untouched pool slides
hits = total = 0
for sid in sorted(state.pool_slide_ids):
    pmap = predict_map(model, embeddings[sid], grids[sid].rows, grids[sid].cols)
    for addr, cls in slides[sid].truth_foreground().items():
        if cls not in CLASSES:
            continue
        hits += pmap.argmax_class(addr) == cls
        total += 1
print(f"held-out accuracy on the remaining pool: {hits / total:.3f} "
      f"({total} tiles)")
