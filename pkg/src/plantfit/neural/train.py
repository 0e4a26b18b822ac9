"""Mini-batch training loop and batched inference."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import EmptyTrainSet, ShapeMismatch
from . import layers as L
from .networks import MVCNN, MVCNNConfig, PointNet, PointNetConfig
from .optim import AdamConfig, AdamState, adam_update

log = logging.getLogger(__name__)

# Batch size and learning rate per network kind, as used for the plant-scan experiments.
KIND_DEFAULTS = {
    "mvcnn": {"batch_size": 64, "learning_rate": 0.001},
    "pointnet": {"batch_size": 32, "learning_rate": 0.0001},
}


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "pointnet"
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    seed: int = 0
    image_side: int = 64
    n_points: int = 2048
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in KIND_DEFAULTS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        for key, value in KIND_DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)


def default_model(cfg: TrainConfig, num_classes: int, arch: Optional[dict] = None):
    arch = dict(arch or {})
    dtype = np.dtype(cfg.dtype)
    if cfg.kind == "pointnet":
        return PointNet.init(PointNetConfig(num_classes, **arch), cfg.seed, dtype)
    arch.setdefault("image_side", cfg.image_side)
    return MVCNN.init(MVCNNConfig(num_classes, **arch), cfg.seed, dtype)


def compute_gradients(batch, model):
    """``(loss, grads)`` for ``batch = (inputs, labels)`` under mean cross-entropy."""
    x, y = batch
    if len(y) == 0:
        raise ShapeMismatch("batch is empty")
    return model.loss_and_grads(x, y)


def predict_batch(model, x, chunk: int = 64):
    """Logits and embeddings for a stacked input array, evaluated in chunks."""
    logits, embs = [], []
    for s in range(0, len(x), chunk):
        lg, em, _ = model.forward_batch(x[s : s + chunk])
        logits.append(lg)
        embs.append(em)
    if not logits:
        return np.empty((0, 0)), np.empty((0, 0))
    return np.concatenate(logits), np.concatenate(embs)


def evaluate(model, x, y):
    logits, _ = predict_batch(model, x)
    loss, _ = L.softmax_cross_entropy(logits.astype(np.float64), y)
    acc = float((logits.argmax(axis=1) == np.asarray(y)).mean())
    return loss, acc


def train_model(train, val, cfg: TrainConfig, num_classes: Optional[int] = None,
                arch: Optional[dict] = None, model=None, on_epoch=None):
    """Train with Adam on ``train = (inputs, labels)``.

    ``val`` may be ``None`` or empty, in which case the per-epoch history
    carries only the training loss. Returns ``(model, history)``. The
    initialization and the shuffle order both derive from ``cfg.seed``.
    """
    x, y = train
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyTrainSet("training set is empty")
    if model is None:
        if num_classes is None:
            num_classes = int(y.max()) + 1
        model = default_model(cfg, num_classes, arch)
    params = model.params
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 1])
    has_val = val is not None and len(val[1]) > 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total, seen = 0.0, 0
        for s in range(0, len(y), cfg.batch_size):
            idx = np.sort(order[s : s + cfg.batch_size])
            loss, grads = model.with_params(params).loss_and_grads(x[idx], y[idx])
            params, state = adam_update(params, grads, state, cfg.adam)
            total += loss * len(idx)
            seen += len(idx)
        model = model.with_params(params)
        row = {"epoch": epoch + 1, "train_loss": total / seen}
        if has_val:
            row["val_loss"], row["val_accuracy"] = evaluate(model, val[0], np.asarray(val[1]))
        history.append(row)
        log.info("epoch %d %s", epoch + 1, row)
        if on_epoch is not None:
            on_epoch(row)
    return model, history
