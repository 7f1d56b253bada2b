"""Command-line interface over a histoloop data root.

Subcommands mirror the pipeline stages: tile, embed, annotate (serve),
dataset merge/split/stats, train, predict, round open/status/apply/close,
qc mask/dice/bags, export.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import label_store, pipeline, qc, tiler
from .active_loop import RoundJournal, RoundState, close_round
from .classifier import (
    TrainConfig,
    build_feature_table,
    load_model,
    load_prediction_map,
    save_model,
    train,
)
from .embedder import embed_batch, get_backend, load_embeddings, save_embeddings
from .store import ProjectPaths

PATCH_NAME_RE = re.compile(r"^(?P<slide>.+)__r(?P<row>\d+)_c(?P<col>\d+)\.png$")


def _paths(args) -> ProjectPaths:
    return ProjectPaths(args.data_root)


def cmd_tile(args) -> int:
    source = tiler.open_slide(args.slide, slide_id=args.slide_id, base_mpp=args.base_mpp)
    paths = ProjectPaths(args.out) if args.out else _paths(args)
    grid, records = pipeline.tile_slide(
        source, paths, tile_size_px=args.tile, working_mpp=args.mpp
    )
    n_bg = int(grid.background_flags.sum())
    print(
        f"{grid.slide_id}: {grid.rows}x{grid.cols} tiles, "
        f"{grid.n_tiles - n_bg} foreground / {n_bg} background"
    )
    return 0


def cmd_embed(args) -> int:
    backend = get_backend(args.backend)
    patch_dir = Path(args.slide_dir)
    files = sorted(patch_dir.glob("*.png"))
    if not files:
        print(f"no patch images in {patch_dir}", file=sys.stderr)
        return 1
    patches = []
    from PIL import Image

    slide_id = None
    for path in files:
        match = PATCH_NAME_RE.match(path.name)
        if not match:
            continue
        slide_id = match.group("slide")
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"))
        patches.append(
            tiler.Patch(slide_id, int(match.group("row")), int(match.group("col")), pixels)
        )
    embeddings = embed_batch(backend, patches)
    out_dir = Path(args.out) if args.out else _paths(args).embeddings
    save_embeddings(embeddings, out_dir, backend_name=backend.name)
    print(f"{slide_id}: embedded {len(embeddings)} patches -> {out_dir}")
    return 0


def cmd_annotate(args) -> int:
    from .service import ServiceConfig, create_app

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig.load()
    config.data_root = args.data_root
    if args.port:
        config.port = args.port
    paths = _paths(args)
    if not paths.has_embeddings(args.slide):
        print(
            f"slide {args.slide!r} is not embedded yet; run tile + embed first",
            file=sys.stderr,
        )
        return 1
    if not args.serve:
        print("nothing to do without --serve (the UI talks to the HTTP service)")
        return 0
    app = create_app(config)
    manager = app.state.sessions
    if manager.exists(args.slide):
        session = manager.get(args.slide)
    else:
        session = manager.create(args.slide, None, actor="cli")
    print(
        f"session for {args.slide}: round {session.round_index}, "
        f"{len(session.review_queue)} clusters to review"
    )
    print(f"serving on {config.host}:{config.port}")
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port)
    return 0


def _load_dataset_input(path: str) -> label_store.LabeledDataset:
    """A merge input is a dataset directory or one finalized-session JSON."""
    p = Path(path)
    if p.is_dir():
        return label_store.load_dataset(p)
    slide = label_store.LabeledSlide.from_dict(json.loads(p.read_text()))
    return label_store.LabeledDataset.from_slides([slide])


def cmd_dataset(args) -> int:
    paths = _paths(args)
    if args.dataset_cmd == "merge":
        datasets = [_load_dataset_input(d) for d in args.inputs]
        merged = label_store.merge(datasets)
        label_store.save_dataset(merged, args.out or paths.datasets)
        print(f"merged {len(args.inputs)} inputs -> {merged.n_slides} slides, "
              f"{merged.n_labeled} labeled patches")
    elif args.dataset_cmd == "split":
        ds = label_store.load_dataset(args.data or paths.datasets)
        train_ds, val_ds = label_store.split_by_slide(ds, args.fraction, args.seed)
        label_store.save_dataset(train_ds, args.out_train)
        label_store.save_dataset(val_ds, args.out_val)
        print(f"split {ds.n_slides} slides -> {train_ds.n_slides} train / "
              f"{val_ds.n_slides} validation")
    elif args.dataset_cmd == "stats":
        ds = label_store.load_dataset(args.data or paths.datasets)
        print(json.dumps(
            {"n_slides": ds.n_slides, "class_counts": ds.class_counts,
             "n_labeled": ds.n_labeled},
            indent=2, sort_keys=True,
        ))
    return 0


def cmd_train(args) -> int:
    spec = json.loads(Path(args.config).read_text())
    data_root = spec.get("data_root", args.data_root)
    paths = ProjectPaths(data_root)
    ds = label_store.load_dataset(spec.get("dataset_dir", paths.datasets))
    split = spec.get("split", {"fraction": 0.75, "seed": 0})
    train_ds, val_ds = label_store.split_by_slide(
        ds, split.get("fraction", 0.75), split.get("seed", 0)
    )
    embeddings = {
        sid: load_embeddings(sid, paths.embeddings) for sid in ds.slides
    }
    config = TrainConfig(
        **{
            key: spec[key]
            for key in ("batch_size", "max_epochs", "optimizer", "learning_rate", "seed")
            if key in spec
        }
    )
    model = train(
        build_feature_table(train_ds, embeddings),
        build_feature_table(val_ds, embeddings),
        config,
    )
    name = spec.get("model_name", "model")
    save_model(model, paths.model_file(name))
    print(
        f"trained {name}: best epoch {model.selected_epoch}, "
        f"val loss {model.min_val_loss():.4f} -> {paths.model_file(name)}"
    )
    return 0


def cmd_predict(args) -> int:
    paths = _paths(args)
    model = load_model(args.model)
    pmap = pipeline.predict_slide(model, args.slide, paths)
    print(f"{args.slide}: predicted {pmap.n_tiles} tiles -> "
          f"{paths.prediction_file(args.slide)}")
    if args.export:
        written = pipeline.export_slide(args.slide, paths)
        print("exports: " + ", ".join(str(p) for p in written))
    return 0


def _load_round(paths: ProjectPaths) -> RoundState:
    doc = json.loads(paths.round_state().read_text())
    return RoundState.from_dict(doc)


def _save_round(paths: ProjectPaths, state: RoundState) -> None:
    paths.round_state().write_text(json.dumps(state.to_dict(), indent=2))


def cmd_round(args) -> int:
    paths = _paths(args)
    journal = RoundJournal(paths.round_journal())
    if args.round_cmd == "open":
        training = set(args.train.split(",")) if args.train else set()
        pool = set(args.pool.split(",")) if args.pool else set()
        state = RoundState(0, training, pool)
        _save_round(paths, state)
        journal.append("round_opened", round_index=0,
                       training=sorted(training), pool=sorted(pool))
        print(f"round 0 open: {len(training)} training, {len(pool)} pool slides")
    elif args.round_cmd == "status":
        state = _load_round(paths)
        print(json.dumps(state.to_dict(), indent=2))
    elif args.round_cmd == "apply":
        state = _load_round(paths)
        model = load_model(paths.model_file(args.model))
        ranked = pipeline.apply_round(model, paths, sorted(state.pool_slide_ids))
        state.model_ref = args.model
        _save_round(paths, state)
        journal.append("model_applied", model=args.model, n_reports=len(ranked))
        for rep in ranked:
            print(f"{rep['slide_id']}: confidence {rep['mean_max_probability']:.3f}")
    elif args.round_cmd == "close":
        state = _load_round(paths)
        labeled = [
            label_store.LabeledSlide.from_dict(
                json.loads(paths.labeled_slide(sid).read_text())
            )
            for sid in sorted(state.flagged)
        ]
        nxt = close_round(state, labeled)
        _save_round(paths, nxt)
        journal.append("round_closed", round_index=state.round_index,
                       promoted=sorted(state.flagged))
        print(f"round {state.round_index} closed; training set now "
              f"{len(nxt.training_slide_ids)} slides")
    return 0


def cmd_qc(args) -> int:
    paths = _paths(args)
    if args.qc_cmd == "mask":
        grid = tiler.load_grid_manifest(paths.grid_manifest(args.slide))
        pmap = load_prediction_map(paths.prediction_file(args.slide))
        mask = qc.predictions_to_foreground_mask(pmap, grid)
        png, meta = qc.save_mask(mask, paths.masks)
        print(f"{args.slide}: foreground {int(mask.values.sum())}/{mask.values.size} "
              f"tiles -> {png}")
    elif args.qc_cmd == "dice":
        def load_dir(d):
            d = Path(d)
            return [qc.load_mask(p.stem.replace(".mask", ""), d)
                    for p in sorted(d.glob("*.mask.png"))]

        predicted = load_dir(args.pred_dir)
        truth = load_dir(args.truth_dir)
        comparator = load_dir(args.comparator_dir) if args.comparator_dir else None
        report = qc.evaluate_qc(predicted, truth, comparator)
        out_json = Path(args.out or paths.masks / "qc_report.json")
        qc.save_qc_report(report, out_json, out_json.with_suffix(".csv"))
        print(f"mean Dice {report['mean_dice']:.4f} over {report['n_slides']} slides")
        if "comparator" in report:
            comp = report["comparator"]
            print(f"vs comparator: {comp['wins']} wins / {comp['losses']} losses "
                  f"/ {comp['ties']} ties")
    elif args.qc_cmd == "bags":
        pmap = load_prediction_map(paths.prediction_file(args.slide))
        bag = qc.filter_bag(pmap, args.strategy)
        jsonl, _ = qc.save_bag_manifest(bag, paths.bags)
        print(f"{args.slide} [{args.strategy}]: {len(bag.included)} tiles kept, "
              f"excluded {bag.excluded_counts} -> {jsonl}")
    return 0


def cmd_export(args) -> int:
    paths = _paths(args)
    source = None
    if args.slide_image:
        source = tiler.open_slide(args.slide_image, slide_id=args.slide,
                                  base_mpp=args.base_mpp)
    written = pipeline.export_slide(args.slide, paths, source=source)
    print("\n".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histoloop",
        description="human-in-the-loop patch annotation, training, and slide QC",
    )
    parser.add_argument(
        "--data-root",
        default=os.environ.get("HISTOLOOP_DATA_ROOT", "./histoloop-data"),
        help="project directory holding grids/patches/embeddings/... "
             "(env: HISTOLOOP_DATA_ROOT)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="tile a slide and filter white patches")
    p.add_argument("--slide", required=True, help="slide image uri/path")
    p.add_argument("--slide-id", default=None)
    p.add_argument("--mpp", type=float, default=1.0, help="working microns-per-pixel")
    p.add_argument("--base-mpp", type=float, default=1.0,
                   help="stored resolution of plain raster inputs")
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--out", default=None, help="data root to write into")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("embed", help="embed a slide's stored patches")
    p.add_argument("--slide-dir", required=True, help="directory of patch PNGs")
    p.add_argument("--backend", choices=("baseline", "deep"), default="baseline")
    p.add_argument("--out", default=None, help="embedding store directory")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("annotate", help="serve the annotation session over HTTP")
    p.add_argument("--slide", required=True)
    p.add_argument("--serve", action="store_true")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--config", default=None, help="service config JSON")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("dataset", help="merge/split/stats over labeled datasets")
    dsub = p.add_subparsers(dest="dataset_cmd", required=True)
    d = dsub.add_parser("merge")
    d.add_argument("--inputs", nargs="+", required=True)
    d.add_argument("--out", default=None)
    d = dsub.add_parser("split")
    d.add_argument("--data", default=None)
    d.add_argument("--fraction", type=float, default=0.75)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out-train", required=True)
    d.add_argument("--out-val", required=True)
    d = dsub.add_parser("stats")
    d.add_argument("--data", default=None)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--config", required=True, help="training config JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict one slide's foreground tiles")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--slide", required=True)
    p.add_argument("--export", action="store_true",
                   help="also write GeoJSON and heatmaps")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("round", help="active-learning round operations")
    rsub = p.add_subparsers(dest="round_cmd", required=True)
    r = rsub.add_parser("open")
    r.add_argument("--train", default="", help="comma-separated slide ids")
    r.add_argument("--pool", default="", help="comma-separated slide ids")
    rsub.add_parser("status")
    r = rsub.add_parser("apply")
    r.add_argument("--model", required=True, help="model name in the data root")
    rsub.add_parser("close")
    p.set_defaults(func=cmd_round)

    p = sub.add_parser("qc", help="masks, Dice evaluation, bag manifests")
    qsub = p.add_subparsers(dest="qc_cmd", required=True)
    q = qsub.add_parser("mask")
    q.add_argument("--slide", required=True)
    q = qsub.add_parser("dice")
    q.add_argument("--pred-dir", required=True)
    q.add_argument("--truth-dir", required=True)
    q.add_argument("--comparator-dir", default=None)
    q.add_argument("--out", default=None)
    q = qsub.add_parser("bags")
    q.add_argument("--slide", required=True)
    q.add_argument("--strategy", choices=qc.BAG_STRATEGIES, default="QC")
    p.set_defaults(func=cmd_qc)

    p = sub.add_parser("export", help="GeoJSON + heatmaps (+ overlay) for a slide")
    p.add_argument("--slide", required=True)
    p.add_argument("--slide-image", default=None)
    p.add_argument("--base-mpp", type=float, default=1.0)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
