"""Parameter-free fusion of two feature maps.

The softmax/nuclear-norm rule (``sfnn``) turns each C×H×W feature map into a
single activity score: softmax across channels at every pixel, nuclear norm
of each channel's H×W map, then an aggregate ``phi`` over the C norms. The
two scores are normalised into weights that sum to one.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, ValidationError
from .ops import nuclear_norm


class DegenerateWeightsWarning(RuntimeWarning):
    """Both activity scores were zero; equal weights were used instead."""


class PhiKind(enum.Enum):
    MAX = "max"
    MEAN = "mean"
    SUM = "sum"
    MAX2 = "max2"
    MEAN2 = "mean2"
    SUM2 = "sum2"

    @property
    def squared(self) -> bool:
        return self.value.endswith("2")

    @property
    def base(self) -> "PhiKind":
        return PhiKind(self.value.rstrip("2"))

    def __call__(self, norms: np.ndarray) -> float:
        base = {"max": np.max, "mean": np.mean, "sum": np.sum}[self.base.value]
        value = float(base(norms))
        return value * value if self.squared else value


@dataclass(frozen=True)
class FusionWeights:
    w1: float
    w2: float

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-12:
            raise ValidationError(f"invalid fusion weights ({self.w1}, {self.w2})")

    def swapped(self) -> "FusionWeights":
        return FusionWeights(self.w2, self.w1)


STRATEGIES = ("sfnn-max", "sfnn-mean", "sfnn-sum", "sfnn-max2", "sfnn-mean2", "sfnn-sum2", "average", "max")
DEFAULT_STRATEGY = "sfnn-max"


def parse_strategy(name: str) -> tuple[str, PhiKind | None]:
    """Split a selector like ``sfnn-max2`` into ``("sfnn", PhiKind.MAX2)``."""
    if name not in STRATEGIES:
        raise ValidationError(f"unknown strategy {name!r}; valid options: {', '.join(STRATEGIES)}")
    if name.startswith("sfnn-"):
        return "sfnn", PhiKind(name[5:])
    return name, None


def _as_feature_map(f) -> np.ndarray:
    arr = np.asarray(getattr(f, "data", f), dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be C×H×W, got shape {arr.shape}")
    return arr


def channel_softmax(f) -> np.ndarray:
    """Softmax over the channel axis at every pixel."""
    x = _as_feature_map(f)
    if not np.all(np.isfinite(x)):
        raise NumericError("channel_softmax input contains non-finite values")
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def channel_nuclear_norms(f) -> np.ndarray:
    """Nuclear norm of every channel of the channel-softmaxed map (C values)."""
    s = channel_softmax(f)
    return np.array([nuclear_norm(ch) for ch in s])


def activity(f, phi: PhiKind) -> float:
    return phi(channel_nuclear_norms(f))


def weights_from_activities(a1: float, a2: float) -> FusionWeights:
    total = a1 + a2
    if not total > 0:
        warnings.warn("both activity scores are zero; using equal weights", DegenerateWeightsWarning, stacklevel=3)
        return FusionWeights(0.5, 0.5)
    # both weights divide by the same (commutative) total so swapping inputs swaps them exactly
    return FusionWeights(a1 / total, a2 / total)


def sfnn_weights(f1, f2, phi: PhiKind = PhiKind.MAX) -> FusionWeights:
    x1, x2 = _as_feature_map(f1), _as_feature_map(f2)
    if x1.shape != x2.shape:
        raise ShapeError(f"feature map shapes differ: {x1.shape} vs {x2.shape}")
    if isinstance(phi, str):
        phi = PhiKind(phi)
    return weights_from_activities(activity(x1, phi), activity(x2, phi))


def fuse(f1, f2, strategy: str = DEFAULT_STRATEGY) -> np.ndarray:
    """Fuse two C×H×W feature maps with a named strategy (see ``STRATEGIES``)."""
    kind, phi = parse_strategy(strategy)
    x1, x2 = _as_feature_map(f1), _as_feature_map(f2)
    if x1.shape != x2.shape:
        raise ShapeError(f"feature map shapes differ: {x1.shape} vs {x2.shape}")
    if kind == "sfnn":
        w = sfnn_weights(x1, x2, phi)
        return w.w1 * x1 + w.w2 * x2
    if kind == "average":
        return 0.5 * x1 + 0.5 * x2
    return np.maximum(x1, x2)
