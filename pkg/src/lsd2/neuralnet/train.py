"""Training loops for the restoration and fusion networks."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..fileio import atomic_write_text, load_image
from ..imagecore import make_rng
from . import layers as L
from .checkpoint import load_checkpoint, save_checkpoint
from .models import FusionNet, Network, UNet, build_model, config_dict
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

ADAM_PREFIX = "adam."


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 5e-5
    lr_halving_period: int | None = 10
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def lsd2(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 50, "lr": 5e-5, "lr_halving_period": 10, **kw})

    @classmethod
    def fusion(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 5, "lr": 2e-5, "lr_halving_period": None, **kw})

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: halved after every ``lr_halving_period`` epochs."""
        if not self.lr_halving_period:
            return self.lr
        return self.lr * 0.5 ** (epoch // self.lr_halving_period)


@dataclass
class TrainState:
    epoch: int = 0          # next epoch to run
    step: int = 0
    losses: list = field(default_factory=list)


@dataclass
class TrainResult:
    model: Network
    losses: list
    adam: AdamState
    state: TrainState


def to_nchw(img) -> np.ndarray:
    return np.asarray(img).transpose(2, 0, 1)[None]


def stack_inputs(short, long) -> np.ndarray:
    """(H, W, 3) short and long images -> (1, 6, H, W) network input."""
    return np.concatenate([to_nchw(short), to_nchw(long)], axis=1)


def crop_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape[:2]
    hh, ww = h - h % multiple, w - w % multiple
    if hh == 0 or ww == 0:
        raise ValueError(f"image {w}x{h} is smaller than the network's size multiple {multiple}")
    y0, x0 = (h - hh) // 2, (w - ww) // 2
    return img[y0:y0 + hh, x0:x0 + ww]


class PairDataset:
    """In-memory (short, long, target) triples, float32 HWC in [0, 1]."""

    def __init__(self, samples):
        self.samples = [tuple(np.asarray(a, dtype=np.float32) for a in s) for s in samples]

    def __len__(self):
        return len(self.samples)

    @classmethod
    def from_directory(cls, directory) -> "PairDataset":
        directory = Path(directory)
        stems = sorted(p.name[:-len("_meta.json")] for p in directory.glob("*_meta.json"))
        samples = []
        for stem in stems:
            triple = []
            for part in ("short", "long", "target"):
                cands = [directory / f"{stem}_{part}{ext}" for ext in (".png", ".f32")]
                path = next((p for p in cands if p.exists()), None)
                if path is None:
                    raise FileNotFoundError(f"{directory}: missing {stem}_{part} image")
                triple.append(load_image(path))
            samples.append(triple)
        return cls(samples)

    def arrays(self, multiple: int = 1, dtype=np.float32):
        """Stacked (N, 6, H, W) inputs and (N, 3, H, W) targets, center-cropped to ``multiple``."""
        if not self.samples:
            raise TrainingError("empty dataset")
        shapes = {s[0].shape for s in self.samples}
        if len(shapes) != 1:
            raise TrainingError(f"dataset images differ in size: {sorted(shapes)}")
        xs, ys = [], []
        for short, long, target in self.samples:
            short, long, target = (crop_to_multiple(a, multiple) for a in (short, long, target))
            xs.append(stack_inputs(short, long))
            ys.append(to_nchw(target))
        return np.concatenate(xs).astype(dtype), np.concatenate(ys).astype(dtype)


def objective(model: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Training loss of one batch, forward pass only (caches are kept)."""
    if isinstance(model, UNet):
        return L.l2_loss(model.forward(x), y)[0]
    w = model.forward(x)
    return L.l2_loss(L.fuse_forward(w, x[:, :3], x[:, 3:])[0], y)[0]


def loss_and_grads(model: Network, x: np.ndarray, y: np.ndarray):
    """Forward + backward of the training objective for one batch."""
    if isinstance(model, UNet):
        out = model.forward(x)
        loss, dout = L.l2_loss(out, y)
        grads, _ = model.backward(dout)
        return loss, grads
    if isinstance(model, FusionNet):
        short, long = x[:, :3], x[:, 3:]
        w = model.forward(x)
        fused, cache = L.fuse_forward(w, short, long)
        loss, dfused = L.l2_loss(fused, y)
        grads, _ = model.backward(L.fuse_backward(dfused, cache))
        return loss, grads
    raise TypeError(f"unsupported model {type(model).__name__}")


def checkpoint_tensors(model: Network, adam: AdamState) -> dict:
    tensors = dict(model.params)
    for name in model.params:
        if name in adam.m:
            tensors[f"{ADAM_PREFIX}m.{name}"] = adam.m[name]
            tensors[f"{ADAM_PREFIX}v.{name}"] = adam.v[name]
    return tensors


def save_training_checkpoint(path, model: Network, adam: AdamState, state: TrainState,
                             config: TrainConfig) -> None:
    record = {"model": config_dict(model), "train": asdict(config),
              "state": {"epoch": state.epoch, "step": state.step, "losses": state.losses,
                        "adam_step": adam.step}}
    save_checkpoint(path, model.kind, record, checkpoint_tensors(model, adam))


def load_model(path, expected_kind: str | None = None) -> Network:
    kind, record, tensors = load_checkpoint(path, expected_kind)
    model = build_model(kind, record["model"])
    for name in model.params:
        if name not in tensors:
            raise ValueError(f"{path}: missing tensor {name}")
        model.params[name] = tensors[name].copy()
    return model


def load_training_checkpoint(path, expected_kind: str | None = None):
    kind, record, tensors = load_checkpoint(path, expected_kind)
    model = load_model(path, expected_kind)
    st = record["state"]
    adam = AdamState(lr=record["train"]["lr"], step=st["adam_step"])
    for name in model.params:
        m = tensors.get(f"{ADAM_PREFIX}m.{name}")
        if m is not None:
            adam.m[name] = m.copy()
            adam.v[name] = tensors[f"{ADAM_PREFIX}v.{name}"].copy()
    state = TrainState(st["epoch"], st["step"], list(st["losses"]))
    return model, adam, state, record


def train(dataset: PairDataset, model: str | Network, config: TrainConfig, *,
          model_config: dict | None = None, resume=None, checkpoint_path=None,
          on_epoch=None) -> TrainResult:
    """Train ``model`` ('lsd2', 'fusion' or an instance) on ``dataset``.

    Batch order depends only on ``config.seed`` and the epoch number, so a run
    resumed from an epoch checkpoint follows the same trajectory as an
    uninterrupted one.
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    if resume is not None:
        net, adam, state, _ = load_training_checkpoint(
            resume, model if isinstance(model, str) else model.kind)
    else:
        net = build_model(model, model_config, seed=config.seed) if isinstance(model, str) else model
        adam = AdamState(lr=config.lr)
        state = TrainState()
    x_all, y_all = dataset.arrays(net.multiple, net.dtype)
    n = len(x_all)

    while state.epoch < config.epochs:
        if config.max_steps is not None and state.step >= config.max_steps:
            break
        epoch = state.epoch
        adam.lr = config.lr_at(epoch)
        order = make_rng(config.seed, 1, epoch).permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            if config.max_steps is not None and state.step >= config.max_steps:
                break
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(net, x_all[idx], y_all[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                                    f"(samples {idx.tolist()})")
            adam_step(net.params, grads, adam)
            state.step += 1
            batch_losses.append(loss)
        epoch_loss = math.fsum(batch_losses) / len(batch_losses)
        state.losses.append(epoch_loss)
        state.epoch += 1
        log.info("epoch %d lr %.3g loss %.6g", epoch, adam.lr, epoch_loss)
        if checkpoint_path is not None:
            save_training_checkpoint(checkpoint_path, net, adam, state, config)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return TrainResult(net, list(state.losses), adam, state)


def write_loss_csv(path, losses) -> None:
    lines = ["epoch,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(losses)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_loss_csv(path) -> list[float]:
    rows = Path(path).read_text().strip().splitlines()
    if rows[0] != "epoch,loss":
        raise ValueError(f"{path}: bad loss csv header")
    return [float(r.split(",")[1]) for r in rows[1:]]


def config_json(config: TrainConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True)
