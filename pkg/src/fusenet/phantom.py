"""Synthetic co-registered head phantoms with MRI-like and CT-like contrast.

Both images share the same anatomy (scalp, skull, grey/white matter,
ventricles, lesions) drawn from a seeded generator; only the tissue
intensities differ. CT shows bone bright and soft tissue flat, MRI shows
bone dark with soft-tissue and fluid contrast.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import Image, PairManifest, quantize, save_image, scan_pairs

#                      background scalp  skull  grey  white  csf   lesion
CT_INTENSITY = np.array([0.00, 0.30, 1.00, 0.42, 0.38, 0.22, 0.55])
MRI_INTENSITY = np.array([0.00, 0.75, 0.08, 0.55, 0.38, 0.92, 0.80])


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def tissue_labels(size: int, rng: np.random.Generator) -> np.ndarray:
    """Integer label map (indices into the intensity tables)."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2 - 1
    labels = np.zeros((size, size), dtype=np.int64)
    ry, rx = rng.uniform(0.78, 0.9), rng.uniform(0.62, 0.75)
    cy, cx = rng.uniform(-0.04, 0.04, size=2)
    tilt = rng.uniform(-0.15, 0.15)
    labels[_ellipse(yy, xx, cy, cx, ry, rx, tilt)] = 1
    skull_t = rng.uniform(0.06, 0.1)
    labels[_ellipse(yy, xx, cy, cx, ry - 0.04, rx - 0.04, tilt)] = 2
    brain = _ellipse(yy, xx, cy, cx, ry - 0.04 - skull_t, rx - 0.04 - skull_t, tilt)

    # grey/white split from a smooth random field
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16)
    field = (field - field.mean()) / (field.std() + 1e-12)
    labels[brain] = np.where(field[brain] > rng.uniform(-0.3, 0.3), 3, 4)

    for side in (-1, 1):
        vy = cy + rng.uniform(-0.12, 0.05)
        vx = cx + side * rng.uniform(0.08, 0.16)
        vent = _ellipse(yy, xx, vy, vx, rng.uniform(0.15, 0.28), rng.uniform(0.04, 0.08), side * rng.uniform(0.1, 0.4))
        labels[vent & brain] = 5
    for _ in range(rng.integers(1, 4)):
        ly, lx = rng.uniform(-0.45, 0.45, size=2) * (ry, rx) + (cy, cx)
        r = rng.uniform(0.04, 0.1)
        labels[_ellipse(yy, xx, ly, lx, r, r * rng.uniform(0.7, 1.3)) & brain] = 6
    return labels


def phantom_pair(size: int = 256, seed: int = 0, noise: float = 0.01, texture: float = 0.04,
                 blur: float = 0.6) -> tuple[Image, Image]:
    """Return an (MRI-like, CT-like) pair of 8-bit-quantised images."""
    rng = np.random.default_rng(seed)
    labels = tissue_labels(size, rng)
    out = []
    for table in (MRI_INTENSITY, CT_INTENSITY):
        img = table[labels].astype(np.float64)
        if texture:
            tex = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 64)
            tex /= tex.std() + 1e-12
            img = img + texture * tex * (labels > 0)
        if blur:
            img = ndimage.gaussian_filter(img, blur)
        if noise:
            img = img + noise * rng.standard_normal((size, size)) * (labels > 0)
        out.append(quantize(np.clip(img, 0.0, 1.0)))
    mri, ct = out
    return Image(mri, f"phantom{seed:04d}/mri"), Image(ct, f"phantom{seed:04d}/ct")


def write_phantom_dataset(root, n_pairs: int, size: int = 96, seed: int = 0, **kwargs) -> PairManifest:
    """Write ``n_pairs`` phantom pairs as ``root/a/*.png`` (MRI) and ``root/b/*.png`` (CT)."""
    root = Path(root)
    (root / "a").mkdir(parents=True, exist_ok=True)
    (root / "b").mkdir(parents=True, exist_ok=True)
    for i in range(n_pairs):
        mri, ct = phantom_pair(size, seed=seed * 100003 + i, **kwargs)
        save_image(mri, root / "a" / f"pair{i:03d}.png")
        save_image(ct, root / "b" / f"pair{i:03d}.png")
    return scan_pairs(root, seed=seed)
