"""Loading, validating and splitting co-registered grayscale image pairs.

Pairs live on disk as ``<root>/a/<stem>.png`` and ``<root>/b/<stem>.png``.
Pixel bytes are mapped to [0, 1] by dividing by 255.
"""

from __future__ import annotations

import json
import os
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, ImageReadError, ValidationError

SPLITS = ("train", "val", "test")


@dataclass
class Image:
    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError(f"image pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise ValidationError(f"image {self.source_id!r} has pixel values outside [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def read_png(path) -> Image:
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValidationError(f"{path}: only PNG input is supported")
    try:
        with PILImage.open(path) as im:
            im.load()
            mode, fmt = im.mode, im.format
            bands = len(im.getbands())
            arr = np.asarray(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ImageReadError(f"{path}: cannot decode image ({exc})") from exc
    if fmt != "PNG":
        raise ValidationError(f"{path}: expected PNG data, found {fmt}")
    if bands != 1:
        raise ValidationError(f"{path}: expected a single-channel image, found {bands} channels ({mode})")
    if mode != "L":
        raise ValidationError(f"{path}: expected 8-bit grayscale, found mode {mode}")
    return Image(arr.astype(np.float64) / 255.0, source_id=path.stem)


def load_pair(path_a, path_b) -> tuple[Image, Image]:
    a, b = read_png(path_a), read_png(path_b)
    if a.shape != b.shape:
        raise ValidationError(f"pair dimensions differ: {path_a} is {a.shape}, {path_b} is {b.shape}")
    return a, b


def to_bytes(pixels) -> np.ndarray:
    """round(p*255) with halves rounded up, clamped to [0, 255]."""
    p = np.asarray(pixels, dtype=np.float64)
    return np.clip(np.floor(p * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(img, path) -> None:
    pixels = img.pixels if isinstance(img, Image) else Image(np.asarray(img)).pixels
    path = Path(path)
    try:
        PILImage.fromarray(to_bytes(pixels), mode="L").save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def quantize(pixels) -> np.ndarray:
    """Snap [0, 1] values to the 256 levels of an 8-bit image."""
    return to_bytes(pixels) / 255.0


def center_crop(img: Image, size: int) -> Image:
    h, w = img.shape
    if size > h or size > w:
        raise ValidationError(f"crop {size} larger than image {h}×{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return Image(img.pixels[top : top + size, left : left + size], img.source_id)


# -- manifests ------------------------------------------------------------------

@dataclass
class PairEntry:
    pair_id: str
    path_a: str
    path_b: str
    split: str | None = None


@dataclass
class PairManifest:
    entries: list[PairEntry]
    seed: int = 0
    base_dir: Path | None = field(default=None, compare=False)

    @property
    def split_assignment(self) -> dict[str, str | None]:
        return {e.pair_id: e.split for e in self.entries}

    def ids(self, split: str) -> list[str]:
        return [e.pair_id for e in self.entries if e.split == split]

    def split_entries(self, split: str) -> list[PairEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p

    def load(self, entry: PairEntry) -> tuple[Image, Image]:
        a, b = load_pair(self.resolve(entry.path_a), self.resolve(entry.path_b))
        a.source_id, b.source_id = f"{entry.pair_id}/a", f"{entry.pair_id}/b"
        return a, b

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "entries": [{"id": e.pair_id, "a": e.path_a, "b": e.path_b, "split": e.split} for e in self.entries],
        }

    def save(self, path) -> None:
        """Write JSON with entry paths relative to the manifest file's directory."""
        path = Path(path)
        target = path.resolve().parent
        rel = PairManifest(
            [
                PairEntry(e.pair_id, _relpath(self.resolve(e.path_a), target), _relpath(self.resolve(e.path_b), target), e.split)
                for e in self.entries
            ],
            self.seed,
        )
        path.write_text(json.dumps(rel.to_json(), indent=2))

    @classmethod
    def from_json(cls, data: dict, base_dir=None) -> "PairManifest":
        try:
            entries = [PairEntry(str(e["id"]), str(e["a"]), str(e["b"]), e.get("split")) for e in data["entries"]]
            seed = int(data.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        for e in entries:
            if e.split is not None and e.split not in SPLITS:
                raise FormatError(f"pair {e.pair_id!r} has unknown split {e.split!r}")
        ids = [e.pair_id for e in entries]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest contains duplicate pair ids")
        return cls(entries, seed, Path(base_dir) if base_dir is not None else None)

    @classmethod
    def load_file(cls, path) -> "PairManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json(data, base_dir=path.parent)


def _relpath(p: Path, start: Path) -> str:
    try:
        return os.path.relpath(p.resolve(), start)
    except ValueError:  # different drive on Windows
        return str(p.resolve())


def scan_pairs(root, seed: int = 0) -> PairManifest:
    """Match ``root/a/*.png`` with ``root/b/*.png`` by filename stem."""
    root = Path(root)
    dir_a, dir_b = root / "a", root / "b"
    if not dir_a.is_dir() or not dir_b.is_dir():
        raise FileNotFoundError(f"{root}: expected subdirectories 'a' and 'b'")
    stems_a = {p.stem for p in dir_a.glob("*.png")}
    stems_b = {p.stem for p in dir_b.glob("*.png")}
    unmatched = sorted(stems_a ^ stems_b)
    if unmatched:
        raise ValidationError(f"{root}: unpaired images {unmatched[:10]}")
    entries = [
        PairEntry(stem, str(Path("a") / f"{stem}.png"), str(Path("b") / f"{stem}.png"))
        for stem in sorted(stems_a)
    ]
    return PairManifest(entries, seed, base_dir=root)


def make_splits(manifest: PairManifest, n_test: int, val_fraction: float = 0.2, seed: int | None = None) -> PairManifest:
    """Random test/val/train assignment.

    ``n_test`` pairs go to test; of the remainder, ``floor(rest * val_fraction)``
    go to validation and the others to training. Shuffling uses numpy's PCG64
    generator seeded with ``seed`` (defaults to the manifest seed).
    """
    total = len(manifest.entries)
    if not 0 <= n_test < total:
        raise ValidationError(f"n_test={n_test} must be smaller than the number of pairs ({total})")
    if not 0 < val_fraction < 1:
        raise ValidationError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    seed = manifest.seed if seed is None else seed
    order = np.random.Generator(np.random.PCG64(seed)).permutation(total)
    rest = total - n_test
    n_val = math.floor(rest * val_fraction + 1e-9)  # guard 0.3*10 -> 2.999...
    labels = ["test"] * n_test + ["val"] * n_val + ["train"] * (rest - n_val)
    split = {int(idx): label for idx, label in zip(order, labels)}
    entries = [PairEntry(e.pair_id, e.path_a, e.path_b, split[i]) for i, e in enumerate(manifest.entries)]
    return PairManifest(entries, seed, manifest.base_dir)
