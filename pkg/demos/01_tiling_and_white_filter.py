"""Tile a synthetic slide and filter white background patches.

The white rule drops a patch when strictly more than 95% of its pixels have
a mean RGB strictly above 230. Run from the repo root:

    python3 demos/01_tiling_and_white_filter.py
"""

from pathlib import Path

import numpy as np

from histoloop.store import ProjectPaths
from histoloop.synth import make_slide
from histoloop.tiler import Patch, build_tile_grid, extract_patches, is_background

out = ProjectPaths(Path("demo-output") / "01_tiling")

# A 12x12-tile slide: six procedural tissue textures plus white regions.
slide = make_slide("demo-slide", rows=12, cols=12, tile_size=64, seed=7)
print(f"slide {slide.slide_id}: {slide.source.ref.width_px}x{slide.source.ref.height_px}px "
      f"at {slide.source.ref.base_mpp} mpp")

grid = build_tile_grid(slide.source.ref, tile_size_px=64, working_mpp=1.0)
print(f"grid: {grid.rows} rows x {grid.cols} cols = {grid.n_tiles} tiles")

n_fg = n_bg = 0
for rec in extract_patches(slide.source, grid):
    if rec.is_background:
        n_bg += 1
    else:
        n_fg += 1
print(f"extracted: {n_fg} foreground, {n_bg} background (white)")

truth_white = sum(1 for cls in slide.truth.values() if cls == "White")
print(f"ground truth has {truth_white} white tiles -> filter agreement "
      f"{'exact' if truth_white == n_bg else 'off'}")

# The boundary is strict: exactly 95% bright pixels is NOT background.
flat = np.zeros((400, 3), dtype=np.uint8)
flat[:380] = 255                       # 380/400 = exactly 95%
print("exactly 95.0% bright ->", is_background(Patch("p", 0, 0, flat.reshape(20, 20, 3))))
flat[380] = 255                        # one more pixel
print("one pixel above 95% ->", is_background(Patch("p", 0, 0, flat.reshape(20, 20, 3))))

from histoloop.tiler import save_grid_manifest

save_grid_manifest(grid, out.grid_manifest(slide.slide_id))
print(f"manifest written to {out.grid_manifest(slide.slide_id)}")
