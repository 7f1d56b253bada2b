"""Patch -> 40-dimensional feature vectors for clustering.

Backends are pluggable behind a single contract (deterministic, fixed
output dimension). The baseline texture backend is fully specified and
needs no pretrained weights, so the whole pipeline runs at desk scale;
the deep backend adapter lives in histoloop.deep and is optional.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackendFaultError, ConfigurationError
from .tiler import Patch

EMBEDDING_DIM = 40


@dataclass(frozen=True)
class Embedding:
    slide_id: str
    row: int
    col: int
    vector: np.ndarray

    @property
    def address(self) -> tuple[int, int]:
        return (self.row, self.col)


class EmbedderBackend(ABC):
    """Deterministic patch featurizer with a declared output dimension."""

    name: str = "abstract"
    output_dim: int = EMBEDDING_DIM

    @abstractmethod
    def embed_array(self, pixels: np.ndarray) -> np.ndarray:
        """Map an HxWx3 uint8 array to a 1-D float vector."""


class BaselineTextureBackend(EmbedderBackend):
    """Hand-crafted 40-dim texture features, exactly reproducible.

    Layout (all computed on pixels normalized to [0, 1]):
      [0:3]   per-channel mean (R, G, B)
      [3:6]   per-channel standard deviation
      [6:14]  8-bin grayscale intensity histogram, sums to 1
      [14:22] 8-bin gradient-magnitude histogram over pixels with nonzero
              gradient (all zeros on constant patches), sums to 1 otherwise
      [22:38] 16-bin gradient-orientation histogram, same empty convention
      [38]    mean gradient magnitude
      [39]    Shannon entropy (bits) of the intensity histogram

    Gradients are central differences (one-sided at borders); magnitudes
    are clipped to [0, 1] before binning.
    """

    name = "baseline"
    output_dim = EMBEDDING_DIM

    def embed_array(self, pixels: np.ndarray) -> np.ndarray:
        img = pixels.astype(np.float64) / 255.0
        gray = img.mean(axis=2)

        # channel moments from exact integer sums, so constant patches get
        # exactly zero std
        flat = pixels.reshape(-1, 3).astype(np.int64)
        n = flat.shape[0]
        s = flat.sum(axis=0)
        ss = (flat * flat).sum(axis=0)
        means = s / (n * 255.0)
        variances = np.maximum(ss / n - (s / n) ** 2, 0.0)
        stds = np.sqrt(variances) / 255.0

        intensity_hist, _ = np.histogram(gray, bins=8, range=(0.0, 1.0))
        intensity_hist = intensity_hist / gray.size

        gy, gx = np.gradient(gray)
        mag = np.hypot(gx, gy)
        moving = mag > 0.0
        n_moving = int(moving.sum())
        if n_moving:
            mags = np.clip(mag[moving], 0.0, 1.0)
            mag_hist, _ = np.histogram(mags, bins=8, range=(0.0, 1.0))
            mag_hist = mag_hist / n_moving
            orient = np.arctan2(gy[moving], gx[moving])
            orient_hist, _ = np.histogram(orient, bins=16, range=(-np.pi, np.pi))
            orient_hist = orient_hist / n_moving
        else:
            mag_hist = np.zeros(8)
            orient_hist = np.zeros(16)

        nonzero = intensity_hist[intensity_hist > 0]
        entropy = float(-(nonzero * np.log2(nonzero)).sum())

        return np.concatenate(
            [means, stds, intensity_hist, mag_hist, orient_hist,
             [mag.mean()], [entropy]]
        )


def embed(backend: EmbedderBackend, patch: Patch) -> Embedding:
    """Run one patch through a backend, checking the output contract."""
    if backend is None:
        raise ConfigurationError("no embedder backend configured")
    vector = np.asarray(backend.embed_array(patch.pixels), dtype=np.float64)
    if vector.shape != (backend.output_dim,):
        raise BackendFaultError(
            f"backend {backend.name!r} returned shape {vector.shape}, "
            f"declared dim {backend.output_dim}"
        )
    if not np.all(np.isfinite(vector)):
        raise BackendFaultError(f"backend {backend.name!r} produced non-finite values")
    return Embedding(patch.slide_id, patch.row, patch.col, vector)


def embed_batch(
    backend: EmbedderBackend,
    patches: list[Patch],
    errors: list[tuple[int, str]] | None = None,
) -> list[Embedding]:
    """Map embed over patches, order preserved.

    With errors=None a backend fault raises; otherwise the fault is recorded
    as (index, message) and the patch skipped.
    """
    out = []
    for i, patch in enumerate(patches):
        try:
            out.append(embed(backend, patch))
        except BackendFaultError as exc:
            if errors is None:
                raise
            errors.append((i, str(exc)))
    return out


_BACKENDS = {"baseline": BaselineTextureBackend}


def get_backend(name: str, **kwargs) -> EmbedderBackend:
    if name == "deep":
        from .deep import DeepEmbedderBackend

        return DeepEmbedderBackend(**kwargs)
    if name not in _BACKENDS:
        raise ConfigurationError(f"unknown embedder backend {name!r}")
    backend = _BACKENDS[name](**kwargs)
    if backend.output_dim != EMBEDDING_DIM:
        raise ConfigurationError(
            f"backend {name!r} has dim {backend.output_dim}, pipeline needs {EMBEDDING_DIM}"
        )
    return backend


# --- persistence -----------------------------------------------------------

def save_embeddings(
    embeddings: list[Embedding], out_dir: str | Path, backend_name: str = "baseline"
) -> tuple[Path, Path]:
    """Write one slide's embeddings as a matrix + address sidecar.

    Rows are ordered row-major by tile address.
    """
    if not embeddings:
        raise ValueError("no embeddings to save")
    slide_ids = {e.slide_id for e in embeddings}
    if len(slide_ids) != 1:
        raise ValueError(f"embeddings from multiple slides: {sorted(slide_ids)}")
    slide_id = embeddings[0].slide_id
    ordered = sorted(embeddings, key=lambda e: e.address)
    matrix = np.stack([e.vector for e in ordered])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mat_path = out_dir / f"{slide_id}.npy"
    idx_path = out_dir / f"{slide_id}.index.json"
    np.save(mat_path, matrix)
    idx_path.write_text(
        json.dumps(
            {
                "slide_id": slide_id,
                "backend": backend_name,
                "addresses": [[e.row, e.col] for e in ordered],
            }
        )
    )
    return mat_path, idx_path


def load_embeddings(slide_id: str, in_dir: str | Path) -> list[Embedding]:
    in_dir = Path(in_dir)
    matrix = np.load(in_dir / f"{slide_id}.npy")
    index = json.loads((in_dir / f"{slide_id}.index.json").read_text())
    if index["slide_id"] != slide_id:
        raise ValueError(f"index sidecar is for {index['slide_id']!r}")
    if matrix.shape[0] != len(index["addresses"]):
        raise ValueError("embedding matrix and index sidecar disagree on row count")
    return [
        Embedding(slide_id, int(r), int(c), matrix[i])
        for i, (r, c) in enumerate(index["addresses"])
    ]
