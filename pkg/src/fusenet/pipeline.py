"""End-to-end fusion of image pairs and batch evaluation."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import Image, PairManifest, quantize
from .errors import ShapeError, ValidationError
from .fusion import DEFAULT_STRATEGY, STRATEGIES, fuse, parse_strategy
from .metrics import REPORT_HEADER, MetricReport, compute_all, mean_report
from .network import FusionNet, extract_features, load_model, reconstruct


def fuse_features(model: FusionNet, feat_a, feat_b, strategy: str = DEFAULT_STRATEGY) -> Image:
    fused = reconstruct(model, fuse(feat_a, feat_b, strategy))
    return Image(quantize(fused))


def fuse_images(model: FusionNet, img_a: Image, img_b: Image, strategy: str = DEFAULT_STRATEGY) -> Image:
    """Extract features of both images, fuse them and reconstruct an 8-bit image."""
    parse_strategy(strategy)
    if img_a.shape != img_b.shape:
        raise ShapeError(f"input images differ in size: {img_a.shape} vs {img_b.shape}")
    return fuse_features(model, extract_features(model, img_a), extract_features(model, img_b), strategy)


def evaluate_batch(manifest: PairManifest, model: FusionNet | str | Path, strategy: str = DEFAULT_STRATEGY,
                   split: str = "test") -> tuple[list[MetricReport], MetricReport]:
    """Fuse every pair of ``split`` and compute the six metrics, plus their mean.

    ``model`` is a :class:`FusionNet` or a checkpoint path.
    """
    result = evaluate_strategies(manifest, model, [strategy], split)
    return result[strategy]


def evaluate_strategies(manifest: PairManifest, model: FusionNet, strategies: Sequence[str],
                        split: str = "test") -> dict[str, tuple[list[MetricReport], MetricReport]]:
    """Like :func:`evaluate_batch` for several strategies, extracting features once per pair."""
    if not isinstance(model, FusionNet):
        model = load_model(model)[0]
    for s in strategies:
        parse_strategy(s)
    entries = manifest.split_entries(split)
    if not entries:
        raise ValidationError(f"the {split!r} split is empty")
    reports: dict[str, list[MetricReport]] = {s: [] for s in strategies}
    for entry in entries:
        try:
            a, b = manifest.load(entry)
        except OSError as exc:
            raise type(exc)(f"pair {entry.pair_id!r}: {exc}") from exc
        fa, fb = extract_features(model, a), extract_features(model, b)
        for s in strategies:
            fused = fuse_features(model, fa, fb, s)
            reports[s].append(compute_all(fused, a, b, pair_id=entry.pair_id))
    return {s: (r, mean_report(r)) for s, r in reports.items()}


def compare_strategies(manifest: PairManifest, model: FusionNet, strategies: Sequence[str] = STRATEGIES,
                       split: str = "test") -> list[MetricReport]:
    """One mean-metric row per strategy, with ``pair_id`` set to the strategy name."""
    res = evaluate_strategies(manifest, model, strategies, split)
    return [MetricReport(s, *res[s][1].values()) for s in strategies]


def write_report_csv(reports: Sequence[MetricReport], path, mean: MetricReport | None = None) -> None:
    rows = list(reports) + ([mean] if mean is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r.pair_id] + [repr(float(v)) for v in r.values()])


def read_report_csv(path) -> list[MetricReport]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != REPORT_HEADER:
            raise ValidationError(f"{path}: unexpected header {header}")
        return [MetricReport(row[0], *map(float, row[1:])) for row in reader]


def plot_metrics(mean: MetricReport, path, title: str | None = None) -> None:
    """Bar chart of the six aggregate metrics, one panel each (scales differ)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = MetricReport.names()
    fig, axes = plt.subplots(1, len(names), figsize=(2.2 * len(names), 3))
    for ax, name in zip(axes, names):
        value = getattr(mean, name)
        ax.bar([0], [value], color="tab:blue")
        ax.set_title(name)
        ax.set_xticks([])
        ax.text(0, value, f"{value:.3f}", ha="center", va="bottom", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)


def win_rate(better: Sequence[MetricReport], worse: Sequence[MetricReport], metric: str) -> float:
    """Fraction of pairs where ``better`` is strictly greater on ``metric``."""
    a = np.array([getattr(r, metric) for r in better])
    b = np.array([getattr(r, metric) for r in worse])
    if a.shape != b.shape or a.size == 0:
        raise ValidationError("report lists must be non-empty and aligned")
    return float(np.mean(a > b))
