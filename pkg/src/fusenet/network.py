"""Feature extractor, reconstructor and the blocks they are built from.

The extractor maps a 1×H×W image to a 64×H×W feature map:

    shallow = ResidualAttention(1 -> 64, with 1×1 entry conv)(x)
    deep    = Dilran(shallow)
    out     = shallow + ResidualAttention(64 -> 64)(deep)

``Dilran`` runs three 3×3 branches with dilation 1, 3 and 5, concatenates
them (192 channels), merges back to 64 with a 1×1 conv and finishes with a
full-resolution pyramid attention block.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import FormatError, ShapeError
from .ops import ConvSpec, concat_channels, conv2d, init_conv, maxpool2, relu, sigmoid, upsample_bilinear
from .tensor import Tensor, as_tensor

FEATURES = 64
CHECKPOINT_MAGIC = b"FUSENET1"


class Module:
    """Minimal parameter container; children and parameters are found by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def freeze(self) -> "Module":
        for p in self.parameters().values():
            p.requires_grad = False
        return self

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise FormatError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise FormatError(f"tensor {name!r}: stored shape {arr.shape} != architecture shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1, rng=None):
        self.spec = ConvSpec(in_ch, out_ch, kernel=kernel, dilation=dilation)
        rng = rng if rng is not None else np.random.default_rng(0)
        w, b = init_conv(self.spec, rng)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.spec)


class ResidualAttentionBlock(Module):
    """(1 + S(x)) * T(x) with a two-conv trunk and a pool/conv/upsample soft mask.

    ``force_mask`` replaces S(x) by a constant (test hook). Passing a dict as
    ``trace`` records the trunk and mask tensors of the last call.
    """

    def __init__(self, in_ch: int, channels: int = FEATURES, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.entry = Conv2d(in_ch, channels, kernel=1, rng=rng) if in_ch != channels else None
        self.trunk = [Conv2d(channels, channels, rng=rng), Conv2d(channels, channels, rng=rng)]
        self.mask_conv = Conv2d(channels, channels, rng=rng)
        self.force_mask: float | None = None

    def trunk_forward(self, x: Tensor) -> Tensor:
        for conv in self.trunk:
            x = relu(conv(x))
        return x

    def mask_forward(self, x: Tensor) -> Tensor:
        _, h, w = x.shape
        return sigmoid(upsample_bilinear(self.mask_conv(maxpool2(x)), h, w))

    def forward(self, x: Tensor, trace: dict | None = None) -> Tensor:
        x = as_tensor(x)
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError(f"residual attention needs even spatial size, got {x.shape[1]}×{x.shape[2]}")
        if self.entry is not None:
            x = self.entry(x)
        t = self.trunk_forward(x)
        if self.force_mask is None:
            s = self.mask_forward(x)
        else:
            s = Tensor(np.full(t.shape, self.force_mask, dtype=t.dtype))
        if trace is not None:
            trace["trunk"], trace["mask"] = t, s
        return (s + 1.0) * t


class PyramidAttentionBlock(Module):
    """(1 + P1(P2(P3(x)))) * C(x) at full resolution.

    CB3, CB2 and CB1 hold three, two and one 3×3 convs; ``force_chain`` and
    ``trace`` behave like the residual block's hooks.
    """

    def __init__(self, channels: int = FEATURES, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.cb3 = [Conv2d(channels, channels, rng=rng) for _ in range(3)]
        self.cb2 = [Conv2d(channels, channels, rng=rng) for _ in range(2)]
        self.cb1 = [Conv2d(channels, channels, rng=rng)]
        self.skip = Conv2d(channels, channels, rng=rng)
        self.force_chain: float | None = None

    @staticmethod
    def _run(convs, x):
        for conv in convs:
            x = relu(conv(x))
        return x

    def chain_forward(self, x: Tensor) -> Tensor:
        return self._run(self.cb1, self._run(self.cb2, self._run(self.cb3, x)))

    def forward(self, x: Tensor, trace: dict | None = None) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ShapeError(f"pyramid attention expects {self.channels} channels, got shape {x.shape}")
        c = relu(self.skip(x))
        if self.force_chain is None:
            p = self.chain_forward(x)
        else:
            p = Tensor(np.full(c.shape, self.force_chain, dtype=c.dtype))
        if trace is not None:
            trace["skip"], trace["chain"] = c, p
        return (p + 1.0) * c


class Dilran(Module):
    DILATIONS = (1, 3, 5)

    def __init__(self, channels: int = FEATURES, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.branches = [Conv2d(channels, channels, dilation=d, rng=rng) for d in self.DILATIONS]
        self.merge = Conv2d(len(self.DILATIONS) * channels, channels, kernel=1, rng=rng)
        self.pyramid = PyramidAttentionBlock(channels, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        multi = concat_channels([relu(b(x)) for b in self.branches])
        return self.pyramid(relu(self.merge(multi)))


class FeatureExtractor(Module):
    def __init__(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.head = ResidualAttentionBlock(1, FEATURES, rng=rng)
        self.body = Dilran(FEATURES, rng=rng)
        self.bridge = ResidualAttentionBlock(FEATURES, FEATURES, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        _, h, w = x.shape
        if h % 4 or w % 4:
            raise ShapeError(f"image height and width must be divisible by 4, got {h}×{w}")
        shallow = self.head(x)
        return shallow + self.bridge(self.body(shallow))


class Reconstructor(Module):
    def __init__(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.convs = [
            Conv2d(FEATURES, 64, rng=rng),
            Conv2d(64, 32, rng=rng),
            Conv2d(32, 1, rng=rng),
        ]

    def forward(self, f: Tensor) -> Tensor:
        f = as_tensor(f)
        if f.ndim != 3 or f.shape[0] != FEATURES:
            raise ShapeError(f"reconstructor expects {FEATURES} input channels, got shape {f.shape}")
        x = relu(self.convs[0](f))
        x = relu(self.convs[1](x))
        return sigmoid(self.convs[2](x))


class FusionNet(Module):
    """Extractor and reconstructor trained together; fusion happens between them."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.extractor = FeatureExtractor(rng=rng)
        self.reconstructor = Reconstructor(rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.reconstructor(self.extractor(x))


# Parameter count of FusionNet: extractor 603328 + reconstructor 55681.
FUSIONNET_PARAMETERS = 659009


def extract_features(model: FusionNet, img) -> np.ndarray:
    """64×H×W feature map of an :class:`~fusenet.dataio.Image` (or 2-D array)."""
    from .tensor import no_grad

    pixels = getattr(img, "pixels", img)
    with no_grad():
        return model.extractor(Tensor(np.asarray(pixels, dtype=np.float32)[None])).data


def reconstruct(model: FusionNet, features) -> np.ndarray:
    """Single-channel H×W image in (0, 1) from a 64-channel feature map."""
    from .tensor import no_grad

    with no_grad():
        return model.reconstructor(Tensor(np.asarray(features, dtype=np.float32))).data[0]


# -- checkpoints ------------------------------------------------------------

def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(params: Mapping[str, np.ndarray], meta: Mapping, path) -> None:
    """Write ``FUSENET1`` + u32 manifest length + JSON manifest + float32 LE payload."""
    tensors = {}
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name]), dtype="<f4")
        tensors[name] = {"shape": list(arr.shape), "offset": offset, "dtype": "float32"}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": tensors, "meta": dict(meta), "payload_bytes": offset}).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        tensors = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt manifest ({exc})") from exc
    payload = memoryview(raw)[12 + mlen :]
    params = {}
    for name, entry in tensors.items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad manifest entry for {name!r}") from exc
        if entry.get("dtype", "float32") != "float32":
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {entry.get('dtype')}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + nbytes > len(payload):
            raise FormatError(f"{path}: tensor {name!r} lies outside the payload (truncated file?)")
        params[name] = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape).copy()
    return params, dict(manifest.get("meta", {}))


def load_model(path) -> tuple[FusionNet, dict]:
    params, meta = load_checkpoint(path)
    model = FusionNet()
    model.load_state_dict(params)
    return model, meta
