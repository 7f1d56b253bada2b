"""Quality-control derivatives of prediction maps.

Foreground masks live at tile resolution (predictions are patch-based, so
finer boundaries would be fiction); ground-truth pixel masks are brought to
the same grain by majority vote. Bag manifests implement the three MIL
pre-filtering strategies.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classes import CLASSES
from .classifier import PredictionMap
from .errors import MappingIncompleteError
from .tiler import TileGrid

log = logging.getLogger(__name__)

Address = tuple[int, int]

BAG_STRATEGIES = ("All", "QC", "QCFat-")

# External-dataset protocol: CRC-100k's nine classes mapped onto the
# six-class taxonomy (one-to-many targets are allowed by the evaluator).
CRC_LABEL_MAPPING = {
    "ADI": {"Adipose"},
    "NORM": {"Epithelium"},
    "BACK": {"Artifact"},
    "LYM": {"Lymphocytes"},
    "TUM": {"Epithelium"},
    "MUC": {"Miscellaneous"},
    "DEB": {"Miscellaneous"},
    "STR": {"Stroma"},
    "MUS": {"Stroma"},
}


@dataclass
class ForegroundMask:
    """Binary tile-resolution mask: 1 = usable tissue, 0 = background/artifact."""

    slide_id: str
    values: np.ndarray
    working_mpp: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 2:
            raise ValueError("mask values must be 2-D")
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class BagManifest:
    slide_id: str
    strategy: str
    included: list[Address]
    excluded_counts: dict[str, int] = field(default_factory=dict)


def predictions_to_foreground_mask(pmap: PredictionMap, grid: TileGrid) -> ForegroundMask:
    """Tile is foreground unless white-filtered or predicted Artifact."""
    if pmap.slide_id != grid.slide_id:
        raise ValueError(f"prediction map {pmap.slide_id!r} vs grid {grid.slide_id!r}")
    if (pmap.rows, pmap.cols) != (grid.rows, grid.cols):
        raise ValueError("prediction map and grid disagree on dimensions")
    foreground = {tuple(a) for a in grid.foreground_addresses()}
    missing = foreground - set(pmap.probabilities)
    if missing:
        raise ValueError(f"prediction map misses foreground tiles, e.g. {sorted(missing)[:5]}")
    values = np.zeros((grid.rows, grid.cols), dtype=np.uint8)
    for addr in foreground:
        values[addr] = 0 if pmap.argmax_class(addr) == "Artifact" else 1
    return ForegroundMask(grid.slide_id, values, working_mpp=grid.working_mpp)


def dice(a: ForegroundMask, b: ForegroundMask) -> float:
    """2|a and b| / (|a| + |b|); two empty masks count as a perfect match."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a.values, b.values).sum())
    total = int(a.values.sum()) + int(b.values.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def pixel_mask_to_tile_mask(
    pixel_mask: np.ndarray, grid: TileGrid, slide_id: str | None = None
) -> ForegroundMask:
    """Downsample a pixel-level truth mask to the tile grid by majority vote.

    A tile is foreground when at least half its pixel area is; the exact-half
    tie goes to foreground.
    """
    ts = grid.tile_size_px
    pixel_mask = np.asarray(pixel_mask).astype(bool)
    need_h, need_w = grid.rows * ts, grid.cols * ts
    if pixel_mask.shape[0] < need_h or pixel_mask.shape[1] < need_w:
        raise ValueError(
            f"pixel mask {pixel_mask.shape} smaller than grid area {(need_h, need_w)}"
        )
    crop = pixel_mask[:need_h, :need_w]
    per_tile = crop.reshape(grid.rows, ts, grid.cols, ts).mean(axis=(1, 3))
    return ForegroundMask(
        slide_id or grid.slide_id,
        (per_tile >= 0.5).astype(np.uint8),
        working_mpp=grid.working_mpp,
    )


def evaluate_qc(
    predicted: list[ForegroundMask],
    truth: list[ForegroundMask],
    comparator: list[ForegroundMask] | None = None,
) -> dict:
    """Per-slide Dice against truth, the mean, and optional win/loss counts
    versus a comparator mask set. Slides missing from either side are listed
    and excluded from the mean."""
    truth_by_id = {m.slide_id: m for m in truth}
    pred_by_id = {m.slide_id: m for m in predicted}
    comp_by_id = {m.slide_id: m for m in comparator} if comparator else {}
    matched = sorted(set(pred_by_id) & set(truth_by_id))
    missing = sorted(set(pred_by_id) ^ set(truth_by_id))
    if missing:
        log.warning("QC eval: unmatched slides excluded from mean: %s", missing)
    per_slide = {sid: dice(pred_by_id[sid], truth_by_id[sid]) for sid in matched}
    report = {
        "per_slide_dice": per_slide,
        "mean_dice": float(np.mean(list(per_slide.values()))) if per_slide else None,
        "n_slides": len(matched),
        "missing": missing,
    }
    if comparator:
        comp_scores = {
            sid: dice(comp_by_id[sid], truth_by_id[sid])
            for sid in matched
            if sid in comp_by_id
        }
        wins = sum(1 for sid in comp_scores if per_slide[sid] > comp_scores[sid])
        losses = sum(1 for sid in comp_scores if per_slide[sid] < comp_scores[sid])
        report["comparator"] = {
            "per_slide_dice": comp_scores,
            "mean_dice": float(np.mean(list(comp_scores.values()))) if comp_scores else None,
            "wins": wins,
            "losses": losses,
            "ties": len(comp_scores) - wins - losses,
        }
    return report


def filter_bag(pmap: PredictionMap, strategy: str) -> BagManifest:
    """Build a MIL bag manifest from one slide's predictions.

    All keeps every foreground tile; QC drops Artifact-argmax tiles; QCFat-
    additionally drops Adipose-argmax tiles.
    """
    if strategy not in BAG_STRATEGIES:
        raise ValueError(f"unknown bag strategy {strategy!r}; expected {BAG_STRATEGIES}")
    included: list[Address] = []
    excluded = {"artifact": 0, "adipose": 0}
    for addr in sorted(pmap.probabilities):
        cls = pmap.argmax_class(addr)
        if strategy in ("QC", "QCFat-") and cls == "Artifact":
            excluded["artifact"] += 1
            continue
        if strategy == "QCFat-" and cls == "Adipose":
            excluded["adipose"] += 1
            continue
        included.append(addr)
    if strategy == "All":
        excluded = {"artifact": 0, "adipose": 0}
    if not included:
        log.warning("slide %s: %s bag is empty", pmap.slide_id, strategy)
    return BagManifest(pmap.slide_id, strategy, included, excluded)


def mapped_accuracy(
    external_labels: list[str],
    predicted_classes: list[str],
    mapping: dict[str, set[str] | str],
) -> dict:
    """Score predictions against external labels through a class mapping.

    A prediction is correct iff it falls in the external label's mapped
    internal class set. Returns accuracy, per-external-class accuracy, and
    an external-by-internal confusion table.
    """
    if len(external_labels) != len(predicted_classes):
        raise ValueError("labels and predictions differ in length")
    norm = {
        ext: ({targets} if isinstance(targets, str) else set(targets))
        for ext, targets in mapping.items()
    }
    unmapped = sorted({lbl for lbl in external_labels if lbl not in norm})
    if unmapped:
        raise MappingIncompleteError(f"external labels without a mapping: {unmapped}")
    confusion: dict[str, dict[str, int]] = {
        ext: {cls: 0 for cls in CLASSES} for ext in norm
    }
    hits_by_class: dict[str, list[int]] = {ext: [0, 0] for ext in norm}
    correct = 0
    for ext, pred in zip(external_labels, predicted_classes):
        confusion[ext][pred] += 1
        hit = pred in norm[ext]
        correct += hit
        hits_by_class[ext][0] += hit
        hits_by_class[ext][1] += 1
    per_class = {
        ext: (h / n if n else None) for ext, (h, n) in sorted(hits_by_class.items())
    }
    return {
        "accuracy": correct / len(external_labels) if external_labels else None,
        "n": len(external_labels),
        "per_class_accuracy": per_class,
        "confusion": confusion,
    }


# --- persistence -----------------------------------------------------------

def save_mask(mask: ForegroundMask, out_dir: str | Path) -> tuple[Path, Path]:
    """1-bit PNG at tile resolution plus a sidecar with dims and mpp."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"{mask.slide_id}.mask.png"
    meta = out_dir / f"{mask.slide_id}.mask.json"
    Image.fromarray((mask.values * 255).astype(np.uint8)).convert("1").save(png)
    meta.write_text(
        json.dumps(
            {
                "slide_id": mask.slide_id,
                "rows": int(mask.shape[0]),
                "cols": int(mask.shape[1]),
                "working_mpp": mask.working_mpp,
            },
            indent=2,
        )
    )
    return png, meta


def load_mask(slide_id: str, in_dir: str | Path) -> ForegroundMask:
    from PIL import Image

    in_dir = Path(in_dir)
    meta = json.loads((in_dir / f"{slide_id}.mask.json").read_text())
    with Image.open(in_dir / f"{slide_id}.mask.png") as im:
        values = (np.asarray(im) > 0).astype(np.uint8)
    if values.shape != (meta["rows"], meta["cols"]):
        raise ValueError("mask PNG and sidecar disagree on dimensions")
    return ForegroundMask(slide_id, values, working_mpp=meta["working_mpp"])


def save_bag_manifest(bag: BagManifest, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    safe = bag.strategy.replace("-", "minus")
    jsonl = out_dir / f"{bag.slide_id}_{safe}.jsonl"
    summary = out_dir / f"{bag.slide_id}_{safe}.summary.json"
    with jsonl.open("w") as fh:
        for r, c in bag.included:
            fh.write(
                json.dumps(
                    {"slide_id": bag.slide_id, "strategy": bag.strategy,
                     "row": r, "col": c},
                    sort_keys=True,
                )
                + "\n"
            )
    summary.write_text(
        json.dumps(
            {
                "slide_id": bag.slide_id,
                "strategy": bag.strategy,
                "n_included": len(bag.included),
                "excluded_counts": bag.excluded_counts,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return jsonl, summary


def save_qc_report(report: dict, json_path: str | Path, csv_path: str | Path) -> None:
    json_path, csv_path = Path(json_path), Path(csv_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    comp = report.get("comparator", {}).get("per_slide_dice", {})
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["slide_id", "dice"] + (["comparator_dice"] if comp else [])
        writer.writerow(header)
        for sid in sorted(report["per_slide_dice"]):
            row = [sid, report["per_slide_dice"][sid]]
            if comp:
                row.append(comp.get(sid, ""))
            writer.writerow(row)
