"""Embed foreground patches (40-dim texture features) and over-cluster them.

k=32 over-clustering on a slide with ~6 tissue types yields mostly pure
clusters, which is what makes cluster-level labeling cheap.

    python3 demos/02_embeddings_and_clustering.py
"""

import numpy as np

from histoloop.clustering import cluster_embeddings, sample_cluster_grid
from histoloop.embedder import BaselineTextureBackend, embed_batch
from histoloop.synth import make_slide
from histoloop.tiler import build_tile_grid, extract_patches

slide = make_slide("demo-slide", rows=14, cols=14, tile_size=64, seed=11)
grid = build_tile_grid(slide.source.ref, tile_size_px=64, working_mpp=1.0)
patches = [r.patch for r in extract_patches(slide.source, grid) if not r.is_background]

backend = BaselineTextureBackend()
embeddings = embed_batch(backend, patches)
print(f"embedded {len(embeddings)} foreground patches, dim {backend.output_dim}")

assignment = cluster_embeddings(embeddings, k=32, seed=0)
sizes = assignment.cluster_sizes()
print(f"k-means: {assignment.k} clusters, sizes min/median/max = "
      f"{sizes.min()}/{int(np.median(sizes))}/{sizes.max()}")
print(f"objective trace ({len(assignment.inertia_history)} assignment passes): "
      f"{assignment.inertia_history[0]:.2f} -> {assignment.inertia_history[-1]:.2f}")

# How pure did over-clustering get? (uses generator ground truth)
pure = 0
for cid in assignment.nonempty_clusters():
    members = assignment.members(cid)
    counts = {}
    for addr in members:
        cls = slide.truth[addr]
        counts[cls] = counts.get(cls, 0) + 1
    majority, n = max(sorted(counts.items()), key=lambda kv: kv[1])
    if n == len(members):
        pure += 1
print(f"{pure}/{len(assignment.nonempty_clusters())} clusters are single-texture")

# What the annotator would see: a 5x5 sample of one cluster.
sample = sample_cluster_grid(assignment, assignment.nonempty_clusters()[0], seed=42)
print(f"cluster {sample.cluster_id} sample ({len(sample.addresses)} tiles): "
      f"{[slide.truth[a] for a in sample.addresses[:5]]} ...")
