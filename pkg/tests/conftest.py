import numpy as np
import pytest

from histoloop.embedder import BaselineTextureBackend, Embedding, embed
from histoloop.tiler import ArraySlide, Patch, SlideRef


@pytest.fixture
def baseline_backend():
    return BaselineTextureBackend()


def make_patch(pixels, slide_id="s", row=0, col=0):
    return Patch(slide_id, row, col, np.asarray(pixels, dtype=np.uint8))


def constant_patch(value, size=32, slide_id="s", row=0, col=0):
    return make_patch(np.full((size, size, 3), value, dtype=np.uint8),
                      slide_id=slide_id, row=row, col=col)


def array_slide(image, slide_id="s", base_mpp=1.0):
    image = np.asarray(image, dtype=np.uint8)
    ref = SlideRef(
        slide_id=slide_id,
        uri=f"mem://{slide_id}",
        base_mpp=base_mpp,
        width_px=image.shape[1],
        height_px=image.shape[0],
    )
    return ArraySlide(ref, image)


def blob_embeddings(n_clusters, per_cluster, sigma=0.01, seed=0, slide_id="s", dim=40):
    """Tight Gaussian blobs at unit basis vectors; returns (embeddings, truth)."""
    rng = np.random.default_rng(seed)
    embeddings, truth = [], {}
    idx = 0
    for k in range(n_clusters):
        center = np.zeros(dim)
        center[k % dim] = 1.0
        for _ in range(per_cluster):
            vec = center + rng.normal(0, sigma, dim)
            addr = (idx // 1000, idx % 1000)
            embeddings.append(Embedding(slide_id, addr[0], addr[1], vec))
            truth[addr] = k
            idx += 1
    return embeddings, truth


@pytest.fixture
def texture_embedder(baseline_backend):
    def run(pixels, slide_id="s", row=0, col=0):
        return embed(baseline_backend, make_patch(pixels, slide_id, row, col))

    return run
