"""Numpy point-set and multi-view classifiers with reverse-mode gradients and Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .networks import (
    MVCNN,
    MVCNNConfig,
    PointNet,
    PointNetConfig,
    build_model,
    extract_embedding,
    forward_mvcnn,
    forward_pointnet,
)
from .optim import AdamConfig, AdamState, adam_update
from .train import TrainConfig, compute_gradients, evaluate, predict_batch, train_model

__all__ = [
    "MVCNN",
    "MVCNNConfig",
    "PointNet",
    "PointNetConfig",
    "AdamConfig",
    "AdamState",
    "TrainConfig",
    "adam_update",
    "build_model",
    "compute_gradients",
    "evaluate",
    "extract_embedding",
    "forward_mvcnn",
    "forward_pointnet",
    "load_checkpoint",
    "predict_batch",
    "save_checkpoint",
    "train_model",
]
