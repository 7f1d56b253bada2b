"""Slide ingestion, tile grids, and the white-patch background filter.

A slide source only has to satisfy one contract: read an RGB region at a
stated scale. Plain raster images (tests, synthetic slides) and pyramidal
formats (via the optional openslide adapter) both fit behind it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Optional, Protocol

import cv2
import numpy as np

from .errors import EmptyGridError, IngestionError, UnsupportedScaleError

DEFAULT_TILE_SIZE = 256
DEFAULT_WORKING_MPP = 1.0  # ~10x magnification
WHITE_BRIGHTNESS_THRESHOLD = 230
WHITE_FRACTION_THRESHOLD = 0.95


@dataclass(frozen=True)
class SlideRef:
    """Identity and geometry of one stored slide level."""

    slide_id: str
    uri: str
    base_mpp: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("slide dimensions must be positive")
        if self.base_mpp <= 0:
            raise ValueError("base_mpp must be positive")


@dataclass
class TileGrid:
    """Regular tile addressing of a slide at the working resolution.

    background_flags is row-major (rows x cols); all False until
    extract_patches has run, then treated as immutable.
    """

    slide_id: str
    tile_size_px: int
    working_mpp: float
    rows: int
    cols: int
    background_flags: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.background_flags is None:
            self.background_flags = np.zeros((self.rows, self.cols), dtype=bool)
        self.background_flags = np.asarray(self.background_flags, dtype=bool).reshape(
            self.rows, self.cols
        )

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def addresses(self) -> Iterator[tuple[int, int]]:
        for r in range(self.rows):
            for c in range(self.cols):
                yield (r, c)

    def foreground_addresses(self) -> list[tuple[int, int]]:
        rr, cc = np.nonzero(~self.background_flags)
        return [(int(r), int(c)) for r, c in zip(rr, cc)]


@dataclass
class Patch:
    """One tile's pixels as tile_size x tile_size x 3 uint8 RGB."""

    slide_id: str
    row: int
    col: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("patch pixels must be HxWx3")
        if self.pixels.dtype != np.uint8:
            raise ValueError("patch pixels must be uint8")


class SlideSource(Protocol):
    """Adapter contract: read an RGB region at a stated scale.

    `scale` is base_mpp / working_mpp (<= 1, downscaling only); x, y, w, h
    are in scaled-image coordinates. Returns an (h, w, 3) uint8 array.
    """

    ref: SlideRef

    def read_region(self, x: int, y: int, w: int, h: int, scale: float) -> np.ndarray: ...


def _scaled_dims(ref: SlideRef, scale: float) -> tuple[int, int]:
    return int(ref.width_px * scale), int(ref.height_px * scale)


class ArraySlide:
    """In-memory slide backed by a full base-level RGB array."""

    def __init__(self, ref: SlideRef, image: np.ndarray):
        image = np.asarray(image, dtype=np.uint8)
        if image.shape[:2] != (ref.height_px, ref.width_px):
            raise IngestionError(
                f"image shape {image.shape[:2]} does not match ref "
                f"{(ref.height_px, ref.width_px)}"
            )
        self.ref = ref
        self._image = image
        self._scaled_cache: dict[float, np.ndarray] = {}

    def _scaled(self, scale: float) -> np.ndarray:
        if scale not in self._scaled_cache:
            if scale == 1.0:
                self._scaled_cache[scale] = self._image
            else:
                w, h = _scaled_dims(self.ref, scale)
                self._scaled_cache[scale] = cv2.resize(
                    self._image, (w, h), interpolation=cv2.INTER_AREA
                )
        return self._scaled_cache[scale]

    def read_region(self, x: int, y: int, w: int, h: int, scale: float) -> np.ndarray:
        img = self._scaled(scale)
        if y + h > img.shape[0] or x + w > img.shape[1] or x < 0 or y < 0:
            raise IngestionError(f"region ({x},{y},{w},{h}) outside scaled image")
        return img[y : y + h, x : x + w]


class RasterSlide(ArraySlide):
    """Plain large raster image on disk (PNG/TIFF/JPEG) as a slide."""

    def __init__(self, uri: str | Path, slide_id: Optional[str] = None, base_mpp: float = 1.0):
        from PIL import Image

        path = Path(uri)
        try:
            with Image.open(path) as im:
                image = np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise IngestionError(f"cannot read slide image {path}: {exc}") from exc
        ref = SlideRef(
            slide_id=slide_id or path.stem,
            uri=str(path),
            base_mpp=base_mpp,
            width_px=image.shape[1],
            height_px=image.shape[0],
        )
        super().__init__(ref, image)


class OpenSlideSource:
    """Pyramidal slide adapter; requires the optional openslide package."""

    def __init__(self, uri: str | Path, slide_id: Optional[str] = None):
        try:
            import openslide
        except ImportError as exc:
            raise IngestionError(
                "openslide is not installed; pyramidal formats need the "
                "openslide-python adapter"
            ) from exc
        self._slide = openslide.OpenSlide(str(uri))
        mpp = float(self._slide.properties.get("openslide.mpp-x", 0) or 0)
        if mpp <= 0:
            raise IngestionError(f"slide {uri} does not declare its mpp")
        w, h = self._slide.dimensions
        self.ref = SlideRef(
            slide_id=slide_id or Path(uri).stem,
            uri=str(uri),
            base_mpp=mpp,
            width_px=w,
            height_px=h,
        )

    def read_region(self, x: int, y: int, w: int, h: int, scale: float) -> np.ndarray:
        # Read the covering base-level region, then resample to the scaled size.
        bx0, by0 = int(np.floor(x / scale)), int(np.floor(y / scale))
        bx1 = int(np.ceil((x + w) / scale))
        by1 = int(np.ceil((y + h) / scale))
        region = self._slide.read_region((bx0, by0), 0, (bx1 - bx0, by1 - by0))
        rgb = np.asarray(region.convert("RGB"))
        return cv2.resize(rgb, (w, h), interpolation=cv2.INTER_AREA)


def open_slide(uri: str | Path, slide_id: Optional[str] = None, base_mpp: float = 1.0) -> SlideSource:
    """Open a slide source, picking the adapter from the file suffix."""
    suffix = Path(uri).suffix.lower()
    if suffix in (".svs", ".ndpi", ".mrxs", ".scn"):
        return OpenSlideSource(uri, slide_id=slide_id)
    return RasterSlide(uri, slide_id=slide_id, base_mpp=base_mpp)


def build_tile_grid(
    slide: SlideRef,
    tile_size_px: int = DEFAULT_TILE_SIZE,
    working_mpp: float = DEFAULT_WORKING_MPP,
) -> TileGrid:
    """Lay a floor grid of full tiles over the slide at the working resolution.

    Residual right/bottom strips smaller than one tile are dropped.
    """
    if tile_size_px <= 0:
        raise ValueError("tile_size_px must be positive")
    if working_mpp < slide.base_mpp:
        raise UnsupportedScaleError(
            f"working_mpp {working_mpp} is finer than stored level "
            f"{slide.base_mpp}; only downscaling is supported"
        )
    scale = slide.base_mpp / working_mpp
    scaled_w, scaled_h = _scaled_dims(slide, scale)
    rows = scaled_h // tile_size_px
    cols = scaled_w // tile_size_px
    if rows == 0 or cols == 0:
        raise EmptyGridError(
            f"slide {slide.slide_id}: scaled size {scaled_w}x{scaled_h} holds "
            f"no full {tile_size_px}px tile"
        )
    return TileGrid(
        slide_id=slide.slide_id,
        tile_size_px=tile_size_px,
        working_mpp=working_mpp,
        rows=rows,
        cols=cols,
    )


def is_background(
    patch: Patch,
    brightness_threshold: float = WHITE_BRIGHTNESS_THRESHOLD,
    fraction_threshold: float = WHITE_FRACTION_THRESHOLD,
) -> bool:
    """White-patch rule: strictly more than `fraction_threshold` of pixels
    have mean RGB strictly above `brightness_threshold`.

    The pixel mean is the real-valued mean of R, G, B; comparisons are done
    in exact arithmetic (channel sums vs 3*threshold, pixel fraction as a
    rational) so the boundary never shifts with float rounding.
    """
    sums = patch.pixels.sum(axis=2, dtype=np.int64)
    bright = int((sums > 3 * brightness_threshold).sum())
    total = sums.size
    return Fraction(bright, total) > Fraction(str(fraction_threshold))


@dataclass
class TileRecord:
    """One extraction result; `error` is set instead of `patch` on read failure."""

    address: tuple[int, int]
    patch: Optional[Patch]
    is_background: bool
    error: Optional[str] = None


def extract_patches(
    source: SlideSource,
    grid: TileGrid,
    brightness_threshold: float = WHITE_BRIGHTNESS_THRESHOLD,
    fraction_threshold: float = WHITE_FRACTION_THRESHOLD,
) -> Iterator[TileRecord]:
    """Yield every tile of the grid once, flagging white tiles as background.

    Sets grid.background_flags as a side effect. Per-tile read failures are
    reported as error records and processing continues; if more than half
    the tiles fail the slide is rejected outright.
    """
    ref = source.ref
    if grid.slide_id != ref.slide_id:
        raise IngestionError(
            f"grid belongs to {grid.slide_id!r}, source is {ref.slide_id!r}"
        )
    scale = ref.base_mpp / grid.working_mpp
    ts = grid.tile_size_px
    failures = 0
    for r in range(grid.rows):
        for c in range(grid.cols):
            try:
                pixels = source.read_region(c * ts, r * ts, ts, ts, scale)
            except Exception as exc:  # noqa: BLE001 - per-tile fault isolation
                failures += 1
                if failures * 2 > grid.n_tiles:
                    raise IngestionError(
                        f"slide {ref.slide_id}: {failures} of {grid.n_tiles} "
                        f"tiles unreadable"
                    ) from exc
                yield TileRecord((r, c), None, False, error=str(exc))
                continue
            patch = Patch(ref.slide_id, r, c, pixels)
            bg = is_background(patch, brightness_threshold, fraction_threshold)
            grid.background_flags[r, c] = bg
            yield TileRecord((r, c), patch, bg)


# --- persistence -----------------------------------------------------------

def patch_filename(slide_id: str, row: int, col: int) -> str:
    return f"{slide_id}__r{row}_c{col}.png"


def save_patch(patch: Patch, out_dir: str | Path) -> Path:
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / patch_filename(patch.slide_id, patch.row, patch.col)
    Image.fromarray(patch.pixels, mode="RGB").save(path)
    return path


def grid_to_manifest(grid: TileGrid) -> dict:
    bits = "".join("1" if f else "0" for f in grid.background_flags.ravel())
    return {
        "slide_id": grid.slide_id,
        "tile_size_px": grid.tile_size_px,
        "working_mpp": grid.working_mpp,
        "rows": grid.rows,
        "cols": grid.cols,
        "background": bits,
    }


def grid_from_manifest(doc: dict) -> TileGrid:
    flags = np.array([ch == "1" for ch in doc["background"]], dtype=bool)
    return TileGrid(
        slide_id=doc["slide_id"],
        tile_size_px=doc["tile_size_px"],
        working_mpp=doc["working_mpp"],
        rows=doc["rows"],
        cols=doc["cols"],
        background_flags=flags,
    )


def save_grid_manifest(grid: TileGrid, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(grid_to_manifest(grid), indent=2))


def load_grid_manifest(path: str | Path) -> TileGrid:
    return grid_from_manifest(json.loads(Path(path).read_text()))
