"""Six-class patch classifier: training harness, prediction maps, evaluation.

The baseline backend is multinomial logistic regression over the 40-dim
texture embeddings, trained full-batch from a zero init, so runs are
deterministic and finish in seconds. A deep CNN backend honoring the same
artifact contract lives in histoloop.deep.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .classes import CLASSES, CLASS_INDEX, NUM_CLASSES
from .embedder import Embedding
from .errors import ConfigurationError, DataLeakError
from .label_store import LabeledDataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 150
    optimizer: str = "adam"        # "adam" (adaptive-moment) or "gd"
    learning_rate: float = 0.1
    loss: str = "cross_entropy"
    seed: int = 0
    backend: str = "baseline"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")


@dataclass
class FeatureTable:
    """Flat training view: one row per labeled patch."""

    X: np.ndarray                  # n x 40
    y: np.ndarray                  # n, class indices
    slide_ids: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != self.y.shape[0] or self.X.shape[0] != len(self.slide_ids):
            raise ValueError("X, y, slide_ids must agree on row count")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def slides(self) -> set[str]:
        return set(self.slide_ids)


def build_feature_table(
    dataset: LabeledDataset, embeddings_by_slide: dict[str, list[Embedding]]
) -> FeatureTable:
    """Join labels with stored embeddings, row-major within each slide."""
    xs, ys, sids = [], [], []
    for slide_id in sorted(dataset.slides):
        slide = dataset.slides[slide_id]
        by_addr = {e.address: e for e in embeddings_by_slide[slide_id]}
        for addr, cls in sorted(slide.records.items()):
            emb = by_addr.get(addr)
            if emb is None:
                raise ValueError(f"no embedding for labeled tile {slide_id}:{addr}")
            xs.append(emb.vector)
            ys.append(CLASS_INDEX[cls])
            sids.append(slide_id)
    if not xs:
        raise ValueError("dataset has no labeled records")
    return FeatureTable(np.stack(xs), np.array(ys), sids)


@dataclass
class ModelArtifact:
    backend: str
    class_order: tuple[str, ...]
    params: dict[str, np.ndarray]
    report: dict
    selected_epoch: int            # 1-indexed argmin of validation loss

    def min_val_loss(self) -> float:
        return self.report["val_loss"][self.selected_epoch - 1]


@dataclass
class PredictionMap:
    """Per-tile class probabilities for one slide's foreground pool."""

    slide_id: str
    rows: int
    cols: int
    probabilities: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def argmax_class(self, address: tuple[int, int]) -> str:
        # np.argmax takes the first maximum, i.e. ties go to the lowest index
        return CLASSES[int(np.argmax(self.probabilities[address]))]

    def argmax_classes(self) -> dict[tuple[int, int], str]:
        return {addr: self.argmax_class(addr) for addr in self.probabilities}

    @property
    def n_tiles(self) -> int:
        return len(self.probabilities)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-15
    return float(-np.log(np.clip(probs[np.arange(len(y)), y], eps, None)).mean())


class _Adam:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for key, g in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            m_hat = self.m[key] / (1 - b1**self.t)
            v_hat = self.v[key] / (1 - b2**self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + eps)


def train(
    train_table: FeatureTable, val_table: FeatureTable, config: TrainConfig
) -> ModelArtifact:
    """Fit the baseline classifier; checkpoint at the min-validation-loss epoch.

    Per-epoch train/val losses are recorded after each full-batch update.
    A class absent from the training set is flagged in the report but does
    not stop training.
    """
    if config.backend != "baseline":
        raise ConfigurationError(
            f"train() handles the baseline backend; use histoloop.deep for "
            f"{config.backend!r}"
        )
    if train_table.n == 0 or val_table.n == 0:
        raise ValueError("train and validation sets must be non-empty")
    overlap = train_table.slides & val_table.slides
    if overlap:
        raise DataLeakError(f"slides in both train and validation: {sorted(overlap)}")

    missing = [cls for cls in CLASSES if CLASS_INDEX[cls] not in set(train_table.y)]
    if missing:
        log.warning("training set has no examples of: %s", ", ".join(missing))

    mu = train_table.X.mean(axis=0)
    sigma = np.maximum(train_table.X.std(axis=0), 1e-8)
    Xtr = (train_table.X - mu) / sigma
    Xva = (val_table.X - mu) / sigma
    ytr, yva = train_table.y, val_table.y
    n, dim = Xtr.shape

    onehot = np.zeros((n, NUM_CLASSES))
    onehot[np.arange(n), ytr] = 1.0

    params = {"W": np.zeros((dim, NUM_CLASSES)), "b": np.zeros(NUM_CLASSES)}
    adam = _Adam(config.learning_rate) if config.optimizer == "adam" else None

    train_losses, val_losses = [], []
    best = {"epoch": 0, "val_loss": np.inf, "W": None, "b": None}
    for epoch in range(1, config.max_epochs + 1):
        probs = _softmax(Xtr @ params["W"] + params["b"])
        delta = (probs - onehot) / n
        grads = {"W": Xtr.T @ delta, "b": delta.sum(axis=0)}
        if adam is not None:
            adam.step(params, grads)
        else:
            params["W"] -= config.learning_rate * grads["W"]
            params["b"] -= config.learning_rate * grads["b"]

        train_loss = _cross_entropy(_softmax(Xtr @ params["W"] + params["b"]), ytr)
        val_loss = _cross_entropy(_softmax(Xva @ params["W"] + params["b"]), yva)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if val_loss < best["val_loss"]:
            best = {
                "epoch": epoch,
                "val_loss": val_loss,
                "W": params["W"].copy(),
                "b": params["b"].copy(),
            }

    report = {
        "train_loss": train_losses,
        "val_loss": val_losses,
        "degenerate_classes": missing,
        "config": asdict(config),
        "n_train": int(train_table.n),
        "n_val": int(val_table.n),
    }
    return ModelArtifact(
        backend="baseline",
        class_order=CLASSES,
        params={"W": best["W"], "b": best["b"], "mu": mu, "sigma": sigma},
        report=report,
        selected_epoch=best["epoch"],
    )


def predict_probabilities(model: ModelArtifact, features: np.ndarray) -> np.ndarray:
    """Probability simplex per row for a feature matrix."""
    if model.backend != "baseline":
        raise ConfigurationError(f"cannot run backend {model.backend!r} here")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.params["W"].shape[0]:
        raise ConfigurationError(
            f"feature dim {features.shape} does not match model "
            f"({model.params['W'].shape[0]} expected)"
        )
    Xs = (features - model.params["mu"]) / model.params["sigma"]
    return _softmax(Xs @ model.params["W"] + model.params["b"])


def predict_map(
    model: ModelArtifact, embeddings: list[Embedding], rows: int, cols: int
) -> PredictionMap:
    """Predict one slide's foreground embeddings into a PredictionMap."""
    slide_ids = {e.slide_id for e in embeddings}
    if len(slide_ids) != 1:
        raise ValueError(f"embeddings from multiple slides: {sorted(slide_ids)}")
    ordered = sorted(embeddings, key=lambda e: e.address)
    probs = predict_probabilities(model, np.stack([e.vector for e in ordered]))
    return PredictionMap(
        slide_id=ordered[0].slide_id,
        rows=rows,
        cols=cols,
        probabilities={e.address: probs[i] for i, e in enumerate(ordered)},
    )


def evaluate(model: ModelArtifact, table: FeatureTable) -> dict:
    """Accuracy, per-class recall, and a true-by-predicted confusion matrix."""
    if table.n == 0:
        raise ValueError("evaluation set is empty")
    probs = predict_probabilities(model, table.X)
    predicted = probs.argmax(axis=1)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (table.y, predicted), 1)
    support = confusion.sum(axis=1)
    recall = np.divide(
        np.diag(confusion), support, out=np.zeros(NUM_CLASSES), where=support > 0
    )
    return {
        "accuracy": float((predicted == table.y).mean()),
        "per_class_recall": {cls: float(recall[i]) for i, cls in enumerate(CLASSES)},
        "confusion": confusion,
    }


# --- persistence -----------------------------------------------------------

def save_model(model: ModelArtifact, path: str | Path) -> None:
    """Single-file container: metadata.json + params.npz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "backend": model.backend,
        "class_order": list(model.class_order),
        "report": model.report,
        "selected_epoch": model.selected_epoch,
    }
    buf = io.BytesIO()
    np.savez(buf, **model.params)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("metadata.json", json.dumps(meta, indent=2))
        zf.writestr("params.npz", buf.getvalue())


def load_model(path: str | Path) -> ModelArtifact:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("metadata.json"))
        with np.load(io.BytesIO(zf.read("params.npz"))) as blob:
            params = {key: blob[key] for key in blob.files}
    return ModelArtifact(
        backend=meta["backend"],
        class_order=tuple(meta["class_order"]),
        params=params,
        report=meta["report"],
        selected_epoch=meta["selected_epoch"],
    )


def save_prediction_map(pmap: PredictionMap, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(
            json.dumps(
                {"slide_id": pmap.slide_id, "rows": pmap.rows, "cols": pmap.cols,
                 "classes": list(CLASSES)},
                sort_keys=True,
            )
            + "\n"
        )
        for (r, c) in sorted(pmap.probabilities):
            probs = pmap.probabilities[(r, c)]
            fh.write(
                json.dumps(
                    {"row": r, "col": c, "probs": [float(p) for p in probs],
                     "argmax": pmap.argmax_class((r, c))},
                    sort_keys=True,
                )
                + "\n"
            )


def load_prediction_map(path: str | Path) -> PredictionMap:
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
        pmap = PredictionMap(
            slide_id=header["slide_id"], rows=header["rows"], cols=header["cols"]
        )
        for line in fh:
            rec = json.loads(line)
            pmap.probabilities[(rec["row"], rec["col"])] = np.array(rec["probs"])
    return pmap
