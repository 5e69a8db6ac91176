"""Adam optimiser and the reconstruction training loop.

Training runs without the fusion step: every image is encoded, decoded and
compared with itself (``reference_mode="self"``). ``reference_mode="pair"``
instead compares each reconstruction with both images of its pair.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataio import PairManifest, center_crop
from .errors import ConfigError, ShapeError
from .losses import LossConfig, build_perceptual_net, total_loss
from .network import FusionNet, config_hash, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)
    return state


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    crop: int | None = None
    reference_mode: str = "self"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate must be positive; epochs and batch_size at least 1")
        if self.reference_mode not in ("self", "pair"):
            raise ConfigError(f"reference_mode must be 'self' or 'pair', got {self.reference_mode!r}")
        if self.crop is not None and (self.crop < 4 or self.crop % 4):
            raise ConfigError(f"crop must be a positive multiple of 4, got {self.crop}")


@dataclass
class TrainResult:
    model: FusionNet
    history: list[tuple[int, float, float]]
    checkpoint: Path
    best_epoch: int

    @property
    def train_losses(self) -> list[float]:
        return [h[1] for h in self.history]


def _samples(manifest: PairManifest, split: str, cfg: TrainConfig) -> list[tuple[np.ndarray, list[np.ndarray]]]:
    out = []
    for entry in manifest.split_entries(split):
        a, b = manifest.load(entry)
        if cfg.crop:
            a, b = center_crop(a, cfg.crop), center_crop(b, cfg.crop)
        pa = a.pixels.astype(np.float32)[None]
        pb = b.pixels.astype(np.float32)[None]
        if cfg.reference_mode == "self":
            out += [(pa, [pa]), (pb, [pb])]
        else:
            out += [(pa, [pa, pb]), (pb, [pa, pb])]
    return out


def _ref_features(net, refs, layer):
    if net is None:
        return None
    with no_grad():
        return [net.features(Tensor(r), layer).data for r in refs]


def evaluate_loss(model: FusionNet, samples, loss_cfg: LossConfig, net=None, cache=None) -> float:
    """Mean loss over ``samples`` with frozen parameters."""
    if not samples:
        return float("nan")
    losses = []
    with no_grad():
        for i, (x, refs) in enumerate(samples):
            feats = cache.get(i) if cache is not None else None
            losses.append(float(total_loss(model(Tensor(x)), refs, loss_cfg, net, feats).data))
    return float(np.mean(losses))


def train(manifest: PairManifest, train_cfg: TrainConfig, loss_cfg: LossConfig,
          write_files: bool = True) -> TrainResult:
    """Train extractor + reconstructor; keep the checkpoint with the best validation loss.

    Writes ``best.ckpt``, ``loss.csv`` (epoch,train_loss,val_loss) and
    ``config.json`` into ``train_cfg.checkpoint_dir``.
    """
    train_samples = _samples(manifest, "train", train_cfg)
    if not train_samples:
        raise ConfigError("the training split is empty")
    val_samples = _samples(manifest, "val", train_cfg)
    net = build_perceptual_net(loss_cfg)
    layer = loss_cfg.percep_layer
    train_cache = {i: _ref_features(net, refs, layer) for i, (_, refs) in enumerate(train_samples)}
    val_cache = {i: _ref_features(net, refs, layer) for i, (_, refs) in enumerate(val_samples)}

    config = {"train": dataclasses.asdict(train_cfg), "loss": dataclasses.asdict(loss_cfg)}
    out_dir = Path(train_cfg.checkpoint_dir)
    if write_files:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config, indent=2))
    ckpt_path = out_dir / "best.ckpt"

    model = FusionNet(seed=train_cfg.seed)
    params = {name: p for name, p in model.parameters().items()}
    state = AdamState()
    rng = np.random.default_rng(train_cfg.seed)
    history: list[tuple[int, float, float]] = []
    best = (np.inf, 0)
    best_state = model.state_dict()

    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_samples))
        epoch_losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            model.zero_grad()
            for idx in batch:
                x, refs = train_samples[idx]
                loss = total_loss(model(Tensor(x)), refs, loss_cfg, net, train_cache[idx])
                epoch_losses.append(float(loss.data))
                (loss * (1.0 / len(batch))).backward()
            adam_step(
                {k: p.data for k, p in params.items()},
                {k: p.grad for k, p in params.items() if p.grad is not None},
                state,
                train_cfg.learning_rate,
            )
        train_loss = float(np.mean(epoch_losses))
        val_loss = evaluate_loss(model, val_samples, loss_cfg, net, val_cache)
        history.append((epoch, train_loss, val_loss))
        score = val_loss if val_samples else train_loss
        if score < best[0]:
            best = (score, epoch)
            best_state = model.state_dict()
            if write_files:
                meta = {"epoch": epoch, "loss": score, "config_hash": config_hash(config)}
                save_checkpoint(best_state, meta, ckpt_path)
        log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, train_loss, val_loss, time.perf_counter() - t0)
        if write_files:
            write_loss_csv(history, out_dir / "loss.csv")

    model.load_state_dict(best_state)
    return TrainResult(model, history, ckpt_path, best[1])


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            w.writerow([epoch, repr(tr), repr(va)])


def read_loss_csv(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"])) for r in csv.DictReader(fh)]
