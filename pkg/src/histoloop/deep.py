"""Optional CNN backends (torch/torchvision), behind the same contracts.

The embedder adapter taps an intermediate stage of a pretrained CNN and
global-average-pools it to the pipeline's 40 channels; the classifier
adapter is a small ResNet trained with minibatch Adam. Both are pluggable
stand-ins for the deterministic baselines and are not exercised by the
acceptance suite: weights come from configuration, not from this package.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .classes import CLASSES, NUM_CLASSES
from .classifier import ModelArtifact, TrainConfig
from .embedder import EMBEDDING_DIM, EmbedderBackend
from .errors import ConfigurationError


def _require_torch():
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise ConfigurationError(
            "deep backends need torch and torchvision (pip install histoloop[deep])"
        ) from exc
    return torch, torchvision


class DeepEmbedderBackend(EmbedderBackend):
    """Channel-wise global average of one intermediate activation.

    The default tap point is the 40-channel stage of EfficientNet-b0
    (torchvision module path "features.3"). Weights are loaded from the
    configured state-dict path; without one the adapter refuses to start
    rather than silently embedding with random filters.
    """

    name = "deep"
    output_dim = EMBEDDING_DIM

    def __init__(
        self,
        weights_path: str | Path | None = None,
        module_path: str = "features.3",
        allow_random_init: bool = False,
    ):
        torch, torchvision = _require_torch()
        if weights_path is None and not allow_random_init:
            raise ConfigurationError(
                "deep embedder needs a weights_path (or allow_random_init=True "
                "for smoke tests)"
            )
        self._torch = torch
        model = torchvision.models.efficientnet_b0(weights=None)
        if weights_path is not None:
            state = torch.load(str(weights_path), map_location="cpu")
            model.load_state_dict(state)
        model.eval()
        self._model = model
        module = model
        for part in module_path.split("."):
            module = module[int(part)] if part.isdigit() else getattr(module, part)
        self._activation = {}
        module.register_forward_hook(
            lambda mod, inp, out: self._activation.__setitem__("out", out)
        )
        # probe the tap point's channel count once
        with torch.no_grad():
            self._model(torch.zeros(1, 3, 64, 64))
        channels = self._activation["out"].shape[1]
        if channels != self.output_dim:
            raise ConfigurationError(
                f"module {module_path!r} has {channels} channels, need "
                f"{self.output_dim}"
            )

    def embed_array(self, pixels: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1)
        with torch.no_grad():
            self._model(x.unsqueeze(0))
        feat = self._activation["out"]
        return feat.mean(dim=(2, 3)).squeeze(0).numpy().astype(np.float64)


def train_deep(
    train_patches: np.ndarray,
    train_labels: np.ndarray,
    val_patches: np.ndarray,
    val_labels: np.ndarray,
    config: TrainConfig,
    learning_rate: float = 1e-3,
) -> ModelArtifact:
    """Minibatch Adam training of a ResNet18-class CNN on patch pixels.

    Honors the shared artifact contract: per-epoch loss curves, checkpoint
    at the minimum validation loss, fixed class order.
    """
    torch, torchvision = _require_torch()
    torch.manual_seed(config.seed)
    device = "cpu"
    model = torchvision.models.resnet18(weights=None, num_classes=NUM_CLASSES).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()

    def tensor_of(patches):
        x = torch.from_numpy(patches.astype(np.float32) / 255.0)
        return x.permute(0, 3, 1, 2).to(device)

    Xtr, Xva = tensor_of(train_patches), tensor_of(val_patches)
    ytr = torch.from_numpy(train_labels.astype(np.int64)).to(device)
    yva = torch.from_numpy(val_labels.astype(np.int64)).to(device)

    train_losses, val_losses = [], []
    best_state, best_epoch, best_val = None, 0, float("inf")
    n = Xtr.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        perm = torch.randperm(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            opt.zero_grad()
            loss = loss_fn(model(Xtr[idx]), ytr[idx])
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            train_losses.append(float(loss_fn(model(Xtr), ytr)))
            val_loss = float(loss_fn(model(Xva), yva))
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}

    buf = io.BytesIO()
    torch.save(best_state, buf)
    report = {
        "train_loss": train_losses,
        "val_loss": val_losses,
        "degenerate_classes": [
            cls for i, cls in enumerate(CLASSES) if (train_labels == i).sum() == 0
        ],
        "n_train": int(n),
        "n_val": int(val_labels.shape[0]),
    }
    return ModelArtifact(
        backend="deep",
        class_order=CLASSES,
        params={"state_dict_blob": np.frombuffer(buf.getvalue(), dtype=np.uint8)},
        report=report,
        selected_epoch=best_epoch,
    )


def predict_deep(model: ModelArtifact, patches: np.ndarray) -> np.ndarray:
    torch, torchvision = _require_torch()
    if model.backend != "deep":
        raise ConfigurationError(f"not a deep artifact: {model.backend!r}")
    net = torchvision.models.resnet18(weights=None, num_classes=NUM_CLASSES)
    blob = model.params["state_dict_blob"].tobytes()
    net.load_state_dict(torch.load(io.BytesIO(blob)))
    net.eval()
    x = torch.from_numpy(patches.astype(np.float32) / 255.0).permute(0, 3, 1, 2)
    with torch.no_grad():
        probs = torch.softmax(net(x), dim=1).numpy()
    return probs.astype(np.float64)


def save_deep_model(model: ModelArtifact, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "backend": model.backend,
        "class_order": list(model.class_order),
        "report": model.report,
        "selected_epoch": model.selected_epoch,
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("metadata.json", json.dumps(meta, indent=2))
        zf.writestr("state_dict.pt", model.params["state_dict_blob"].tobytes())


def load_deep_model(path: str | Path) -> ModelArtifact:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("metadata.json"))
        blob = np.frombuffer(zf.read("state_dict.pt"), dtype=np.uint8)
    return ModelArtifact(
        backend=meta["backend"],
        class_order=tuple(meta["class_order"]),
        params={"state_dict_blob": blob},
        report=meta["report"],
        selected_epoch=meta["selected_epoch"],
    )
