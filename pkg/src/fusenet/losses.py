"""Reconstruction losses: pixel MSE, image-gradient loss and a perceptual loss.

All losses take the network output and a list of reference images and sum
over the references. ``total_loss`` combines them as

    (mse + lambda1 * grad) / (W * H) + lambda2 * percep
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .network import Conv2d, Module, load_checkpoint, save_checkpoint
from .ops import maxpool2, relu
from .tensor import Tensor, as_tensor, no_grad

VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))


@dataclass
class LossConfig:
    lambda1: float = 0.2
    lambda2: float = 0.2
    percep_layer: int = 3
    ablate_to_mse: bool = False
    percep_weights: str | None = None
    percep_seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 1 <= self.percep_layer <= len(VGG16_BLOCKS):
            raise ConfigError(f"percep_layer must be in 1..{len(VGG16_BLOCKS)}, got {self.percep_layer}")

    @property
    def needs_perceptual(self) -> bool:
        return not self.ablate_to_mse and self.lambda2 > 0


def _as_image_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(getattr(x, "pixels", x)))
    if t.ndim == 2:
        t = t.reshape(1, *t.shape)
    if t.ndim != 3 or t.shape[0] != 1:
        raise ShapeError(f"expected a single-channel image, got shape {t.shape}")
    return t


def _prepare(out, refs) -> tuple[Tensor, list[Tensor]]:
    out = _as_image_tensor(out)
    refs = [_as_image_tensor(r) for r in refs]
    if not refs:
        raise ShapeError("at least one reference image is required")
    for r in refs:
        if r.shape != out.shape:
            raise ShapeError(f"reference shape {r.shape} differs from output shape {out.shape}")
    return out, [Tensor(r.data.astype(out.dtype)) if not r.requires_grad else r for r in refs]


def mse_loss(out, refs) -> Tensor:
    """Sum over references of the squared Frobenius distance."""
    out, refs = _prepare(out, refs)
    total = None
    for r in refs:
        term = (out - r).square().sum()
        total = term if total is None else total + term
    return total


def gradient_loss(out, refs) -> Tensor:
    """Squared distance between forward-difference gradients in x and y."""
    out, refs = _prepare(out, refs)
    total = None
    for r in refs:
        d = out - r
        dx = d[:, :, 1:] - d[:, :, :-1]
        dy = d[:, 1:, :] - d[:, :-1, :]
        term = dx.square().sum() + dy.square().sum()
        total = term if total is None else total + term
    return total


class PerceptualFeatureNet(Module):
    """Frozen VGG16-style conv stack on single-channel input.

    ``features(x, block)`` returns the ReLU output of the last conv in the
    given block (1-based). Weights come from a seeded random init or from a
    checkpoint written by :meth:`save`.
    """

    def __init__(self, blocks: int = 3, seed: int = 0, widths: Sequence[Sequence[int]] = VGG16_BLOCKS):
        if not 1 <= blocks <= len(widths):
            raise ConfigError(f"blocks must be in 1..{len(widths)}")
        rng = np.random.default_rng(seed)
        self.widths = [tuple(w) for w in widths[:blocks]]
        self.layers = []
        in_ch = 1
        for block in self.widths:
            for out_ch in block:
                self.layers.append(Conv2d(in_ch, out_ch, rng=rng))
                in_ch = out_ch
        self.freeze()

    @property
    def blocks(self) -> int:
        return len(self.widths)

    def features(self, x, block: int | None = None) -> Tensor:
        block = self.blocks if block is None else block
        if not 1 <= block <= self.blocks:
            raise ConfigError(f"perceptual net has {self.blocks} blocks, layer {block} requested")
        x = _as_image_tensor(x)
        i = 0
        for b, widths in enumerate(self.widths[:block], start=1):
            if b > 1:
                x = maxpool2(x)
            for _ in widths:
                x = relu(self.layers[i](x))
                i += 1
        return x

    forward = features

    def save(self, path) -> None:
        save_checkpoint(self.state_dict(), {"kind": "perceptual", "widths": [list(w) for w in self.widths]}, path)

    @classmethod
    def load(cls, path) -> "PerceptualFeatureNet":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"perceptual network weights not found: {path}")
        params, meta = load_checkpoint(path)
        widths = meta.get("widths")
        if not widths:
            raise ConfigError(f"{path}: not a perceptual network checkpoint")
        net = cls(blocks=len(widths), widths=widths)
        net.load_state_dict(params)
        return net.freeze()


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def convert_vgg16_weights(state: Mapping[str, np.ndarray], blocks: int = 3) -> PerceptualFeatureNet:
    """Build the feature net from torchvision-style VGG16 ``features.N.*`` arrays.

    The RGB input layer is collapsed for grayscale input (gray replicated to
    three channels) with the ImageNet normalisation folded into the first
    layer; the fold is exact away from the zero-padded border.
    """
    net = PerceptualFeatureNet(blocks=blocks)
    conv_ids = sorted({int(k.split(".")[1]) for k in state if k.startswith("features.") and k.endswith(".weight")})
    if len(conv_ids) < len(net.layers):
        raise ConfigError(f"need {len(net.layers)} conv layers, found {len(conv_ids)}")
    for layer, idx in zip(net.layers, conv_ids):
        w = np.asarray(state[f"features.{idx}.weight"], dtype=np.float64)
        b = np.asarray(state[f"features.{idx}.bias"], dtype=np.float64)
        if layer is net.layers[0]:
            mean = np.asarray(IMAGENET_MEAN)[None, :, None, None]
            std = np.asarray(IMAGENET_STD)[None, :, None, None]
            b = b - np.sum(w * mean / std, axis=(1, 2, 3))
            w = np.sum(w / std, axis=1, keepdims=True)
        if w.shape != layer.weight.shape:
            raise ConfigError(f"features.{idx}.weight has shape {w.shape}, expected {layer.weight.shape}")
        layer.weight.data = w.astype(np.float32)
        layer.bias.data = b.astype(np.float32)
    return net


def perceptual_loss(out, refs, net: PerceptualFeatureNet | None, layer: int = 3, ref_features=None) -> Tensor:
    """Channel/pixel mean of squared feature differences, summed over references.

    ``ref_features`` may hold precomputed features of ``refs`` (the net is frozen).
    """
    if net is None:
        raise ConfigError("perceptual loss needs a feature network")
    out, refs = _prepare(out, refs)
    f_out = net.features(out, layer)
    if ref_features is None:
        with no_grad():
            ref_features = [net.features(r, layer).data for r in refs]
    total = None
    for fr in ref_features:
        term = (f_out - Tensor(np.asarray(fr, dtype=f_out.dtype))).square().mean()
        total = term if total is None else total + term
    return total


def total_loss(out, refs, cfg: LossConfig, net: PerceptualFeatureNet | None = None, ref_features=None) -> Tensor:
    out_t, refs_t = _prepare(out, refs)
    npix = out_t.shape[1] * out_t.shape[2]
    loss = mse_loss(out_t, refs_t) * (1.0 / npix)
    if cfg.ablate_to_mse:
        return loss
    if cfg.lambda1:
        loss = loss + gradient_loss(out_t, refs_t) * (cfg.lambda1 / npix)
    if cfg.lambda2:
        loss = loss + perceptual_loss(out_t, refs_t, net, cfg.percep_layer, ref_features) * cfg.lambda2
    return loss


def build_perceptual_net(cfg: LossConfig) -> PerceptualFeatureNet | None:
    if not cfg.needs_perceptual:
        return None
    if cfg.percep_weights:
        net = PerceptualFeatureNet.load(cfg.percep_weights)
        if net.blocks < cfg.percep_layer:
            raise ConfigError(f"perceptual weights have {net.blocks} blocks; layer {cfg.percep_layer} requested")
        return net
    return PerceptualFeatureNet(blocks=cfg.percep_layer, seed=cfg.percep_seed)
