"""Weak-label acceptance filtering and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .raster import BinMask, foreground_count

REASON_OK = "ok"
REASON_EMPTY_COARSE = "empty_coarse"
REASON_OVER_FOREGROUND = "over_foreground"
REASON_OVER_BACKGROUND = "over_background"

FILTER_REASONS = (
    REASON_OK,
    REASON_EMPTY_COARSE,
    REASON_OVER_FOREGROUND,
    REASON_OVER_BACKGROUND,
)


@dataclass(frozen=True)
class FilterVerdict:
    accepted: bool
    reason: str
    fg_fraction: float

    def __post_init__(self) -> None:
        if self.reason not in FILTER_REASONS:
            raise ValueError(f"unknown filter reason {self.reason!r}")
        if self.accepted != (self.reason == REASON_OK):
            raise ValueError("accepted flag must match reason == ok")


@dataclass(frozen=True)
class EvalRow:
    """One cell of an experiment grid: a model evaluated on the test split."""

    dataset: str
    n_gold: int
    n_weak: int
    prompt_mode: str
    strategy: str
    backend: str
    mean_dice: float
    mean_iou: float
    n_test: int
    seed: int
    short_weak: bool = False  # fewer accepted weak labels than requested

    def __post_init__(self) -> None:
        if not (0.0 <= self.mean_dice <= 1.0 and 0.0 <= self.mean_iou <= 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if min(self.n_gold, self.n_weak, self.n_test) < 0:
            raise ValueError("counts must be >= 0")


def accept_weak_label(m: BinMask, tau_filter: float = 0.97) -> FilterVerdict:
    """Reject masks that are nearly all foreground or nearly all background.

    The comparison is exact at pixel granularity: a mask is rejected only if
    its foreground (or background) count exceeds the smallest pixel count
    meeting tau_filter, i.e. count > ceil(tau_filter * total). A mask at
    exactly the threshold fraction is accepted. Evaluated with integer
    arithmetic so no float rounding can flip a verdict.
    """
    if not 0.5 < tau_filter < 1.0:
        raise ValueError(f"tau_filter must be in (0.5, 1), got {tau_filter}")
    total = m.bits.size
    fg = foreground_count(m)
    tau = Fraction(str(tau_filter))
    # ceil(tau * total) in exact integer arithmetic
    limit = -((-tau.numerator * total) // tau.denominator)
    fraction = fg / total
    if fg > limit:
        return FilterVerdict(False, REASON_OVER_FOREGROUND, fraction)
    if total - fg > limit:
        return FilterVerdict(False, REASON_OVER_BACKGROUND, fraction)
    return FilterVerdict(True, REASON_OK, fraction)


def _check_dims(a: BinMask, b: BinMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")


def dice(a: BinMask, b: BinMask) -> float:
    """Sorensen-Dice overlap 2|a&b| / (|a|+|b|); both empty -> 1.0."""
    _check_dims(a, b)
    na = int(np.count_nonzero(a.bits))
    nb = int(np.count_nonzero(b.bits))
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.bits & b.bits))
    return 2.0 * inter / (na + nb)


def iou(a: BinMask, b: BinMask) -> float:
    """Jaccard index (intersection over union); both masks empty -> 1.0."""
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def pixel_accuracy(a: BinMask, b: BinMask) -> float:
    _check_dims(a, b)
    return int(np.count_nonzero(a.bits == b.bits)) / a.bits.size


def evaluate(
    predictions: list[BinMask], gts: list[BinMask]
) -> tuple[float, float, list[tuple[float, float]]]:
    """Unweighted per-image mean (dice, iou) plus the per-image pairs."""
    if not predictions or not gts:
        raise ValueError("evaluate requires at least one (prediction, gt) pair")
    if len(predictions) != len(gts):
        raise ValueError("predictions and gts must have equal length")
    per_image = [(dice(p, g), iou(p, g)) for p, g in zip(predictions, gts)]
    mean_dice = sum(d for d, _ in per_image) / len(per_image)
    mean_iou = sum(i for _, i in per_image) / len(per_image)
    return mean_dice, mean_iou, per_image
