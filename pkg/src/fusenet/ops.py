"""Differentiable layers on C×H×W tensors, plus the nuclear norm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor, as_tensor, make_result


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilation: int = 1
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel", "dilation", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive, got {getattr(self, field)}")
        if self.padding is None:
            object.__setattr__(self, "padding", same_padding(self.kernel, self.dilation))

    @property
    def effective_kernel(self) -> int:
        return self.kernel + (self.kernel - 1) * (self.dilation - 1)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        ext = self.dilation * (self.kernel - 1) + 1
        ho = (h + 2 * self.padding - ext) // self.stride + 1
        wo = (w + 2 * self.padding - ext) // self.stride + 1
        return ho, wo


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Per-side zero padding that keeps the spatial size at stride 1 (odd kernels)."""
    if kernel % 2 == 0:
        raise ValueError(f"'same' padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


def _im2col(xp: np.ndarray, k: int, d: int, s: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            r0, c0 = i * d, j * d
            cols[:, i, j] = xp[:, r0 : r0 + s * (ho - 1) + 1 : s, c0 : c0 + s * (wo - 1) + 1 : s]
    return cols.reshape(c * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Zero-padded 2-D cross-correlation with dilation and stride.

    ``x`` is C_in×H×W, ``w`` is C_out×C_in×k×k and ``b`` has C_out entries.
    """
    x, w = as_tensor(x), as_tensor(w)
    k, d, s, p = spec.kernel, spec.dilation, spec.stride, spec.padding
    expected_w = (spec.out_channels, spec.in_channels, k, k)
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv2d input shape {x.shape} does not match in_channels={spec.in_channels}")
    if w.shape != expected_w:
        raise ShapeError(f"conv2d weight shape {w.shape} does not match expected {expected_w} (input {x.shape})")
    if b is not None and b.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match ({spec.out_channels},)")

    c, h, wd = x.shape
    ho, wo = spec.output_size(h, wd)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d input {x.shape} too small for effective kernel {spec.effective_kernel}")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, k, d, s, ho, wo)
    wmat = w.data.reshape(spec.out_channels, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(spec.out_channels, ho, wo)

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(spec.out_channels, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    r0, c0 = i * d, j * d
                    gxp[:, r0 : r0 + s * (ho - 1) + 1 : s, c0 : c0 + s * (wo - 1) + 1 : s] += gcols[:, i, j]
            gx = gxp[:, p : p + h, p : p + wd] if p else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_result(out, parents, bw)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def maxpool2(x: Tensor) -> Tensor:
    """Non-overlapping 2×2 max pooling on a C×H×W tensor (H, W even)."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial size, got {h}×{w}")
    blocks = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        return (gb.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return make_result(out, (x,), bw)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation matrix (n_out×n_in) with corner-aligned sampling."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def upsample_bilinear(x: Tensor, target_h: int, target_w: int) -> Tensor:
    x = as_tensor(x)
    _, h, w = x.shape
    ry = interp_matrix(h, target_h, x.dtype)
    rx = interp_matrix(w, target_w, x.dtype)
    out = np.einsum("ij,cjk,lk->cil", ry, x.data, rx, optimize=True)
    return make_result(out, (x,), lambda g: (np.einsum("ij,cil,lk->cjk", ry, g, rx, optimize=True),))


def concat_channels(xs) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    hw = xs[0].shape[1:]
    for t in xs:
        if t.ndim != 3 or t.shape[1:] != hw:
            raise ShapeError(f"concat_channels spatial mismatch: {t.shape} vs (*, {hw[0]}, {hw[1]})")
    if len(xs) == 1:
        return xs[0]
    sizes = np.cumsum([t.shape[0] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=0)
    return make_result(out, xs, lambda g: tuple(np.split(g, sizes, axis=0)))


def nuclear_norm(m) -> float:
    """Sum of singular values of a 2-D matrix."""
    a = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"nuclear_norm expects a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("nuclear_norm input contains non-finite entries")
    return float(np.linalg.svd(a, compute_uv=False).sum())


def init_conv(spec: ConvSpec, rng: np.random.Generator, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Kaiming-uniform (fan-in, ReLU gain) weights and zero biases."""
    fan_in = spec.in_channels * spec.kernel * spec.kernel
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
    return w.astype(dtype), np.zeros(spec.out_channels, dtype=dtype)
