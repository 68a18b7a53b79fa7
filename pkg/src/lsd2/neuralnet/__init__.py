"""Minimal numpy network stack: layers with analytic backward passes, the two
networks, Adam, training loops and checkpoints."""
from __future__ import annotations

import numpy as np

from . import layers
from .checkpoint import (CheckpointError, CheckpointKindError, decode_checkpoint,
                         encode_checkpoint, load_checkpoint, save_checkpoint)
from .layers import DimensionError, l2_loss
from .models import FusionNet, FusionNetConfig, Network, UNet, UNetConfig, build_model
from .optim import AdamState, adam_step
from .train import (PairDataset, TrainConfig, TrainingError, TrainResult, load_model,
                    load_training_checkpoint, read_loss_csv, stack_inputs, train,
                    write_loss_csv)


def _pad_to_multiple(x: np.ndarray, multiple: int):
    h, w = x.shape[2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if min(h, w) > max(ph, pw) else "edge"
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode), (h, w)


def unet_forward(short, long, model: UNet, clamp: bool = True) -> np.ndarray:
    """Restore one (H, W, 3) pair; any size is accepted via reflective pad and crop-back."""
    short = np.asarray(short)
    long = np.asarray(long)
    if short.shape != long.shape:
        raise DimensionError(f"short {short.shape} and long {long.shape} differ")
    x, (h, w) = _pad_to_multiple(stack_inputs(short, long).astype(model.dtype), model.multiple)
    out = model.forward(x)[0, :, :h, :w].transpose(1, 2, 0)
    model._caches = []
    return np.clip(out, 0.0, 1.0) if clamp else out


def fusion_forward(short, long, model: FusionNet) -> np.ndarray:
    """Weight map (H, W) in [0, 1] for one pair."""
    short = np.asarray(short)
    long = np.asarray(long)
    if short.shape != long.shape:
        raise DimensionError(f"short {short.shape} and long {long.shape} differ")
    w = model.forward(stack_inputs(short, long).astype(model.dtype))[0, 0]
    model._caches = []
    return w


def fuse(weight, short, long) -> np.ndarray:
    """``W * long + (1 - W) * short`` with one weight per pixel shared by all channels."""
    weight = np.asarray(weight)
    short = np.asarray(short)
    long = np.asarray(long)
    if short.shape != long.shape or weight.shape != short.shape[:2]:
        raise DimensionError(f"fuse: weight {weight.shape}, short {short.shape}, long {long.shape}")
    w = weight[..., None]
    return w * long + (1 - w) * short


__all__ = [
    "layers", "CheckpointError", "CheckpointKindError", "decode_checkpoint", "encode_checkpoint",
    "load_checkpoint", "save_checkpoint", "DimensionError", "l2_loss", "FusionNet",
    "FusionNetConfig", "Network", "UNet", "UNetConfig", "build_model", "AdamState", "adam_step",
    "PairDataset", "TrainConfig", "TrainingError", "TrainResult", "load_model",
    "load_training_checkpoint", "read_loss_csv", "stack_inputs", "train", "write_loss_csv",
    "unet_forward", "fusion_forward", "fuse",
]
