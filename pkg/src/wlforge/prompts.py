"""Prompt extraction: coarse-mask strategy plus the baseline strategies.

The default ("coarse") strategy binarizes the coarse probability mask, keeps
the dominant connected regions, and emits either one padded bounding box per
region or a single point prompt whose positives are the innermost points of
the regions and whose negatives are low-probability pixels. Samples whose
coarse mask yields no usable region are filtered (returned as None).

Baselines for comparison: "darkest" prompts from the darkest 5% of image
pixels instead of the coarse mask; "full_box" prompts with an image-sized box
that ignores content entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .raster import BinMask, GrayImage, ProbMask, binarize
from .regions import RegionPolicy, innermost_point, label_components, select_regions

MODES = ("box", "points")
STRATEGIES = ("coarse", "darkest", "full_box")

DARKEST_PERCENTILE = 5.0  # darkest-pixel baseline cutoff


@dataclass(frozen=True)
class BoxPrompt:
    """Inclusive pixel-index bounding box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self) -> None:
        if not (0 <= self.row_min <= self.row_max and 0 <= self.col_min <= self.col_max):
            raise ValueError(f"degenerate box {self}")


@dataclass(frozen=True)
class PointPrompt:
    """Positive points mark regions to segment, negatives regions to suppress."""

    positives: tuple[tuple[int, int], ...]
    negatives: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if not self.positives:
            raise ValueError("point prompt requires at least one positive")
        if set(self.positives) & set(self.negatives):
            raise ValueError("positives and negatives must be disjoint")


Prompt = Union[BoxPrompt, PointPrompt]


@dataclass(frozen=True)
class PromptSpec:
    """All knobs of the input-selection step."""

    mode: str = "box"
    strategy: str = "coarse"
    binarize_tau: float = 0.5
    policy: RegionPolicy = field(default_factory=RegionPolicy)
    neg_count: int = 3
    neg_tau: float = 0.1
    neg_min_sep: int = 8
    box_pad: int = 2
    seed: int = 0
    split_point_prompts: bool = False  # one PointPrompt per region instead of combined

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.neg_tau < self.binarize_tau:
            raise ValueError("neg_tau must be strictly below binarize_tau")
        if self.neg_min_sep < 1:
            raise ValueError("neg_min_sep must be >= 1")
        if self.box_pad < 0:
            raise ValueError("box_pad must be >= 0")
        if self.neg_count < 0:
            raise ValueError("neg_count must be >= 0")


def _chebyshev(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def sample_negatives(
    coarse: ProbMask,
    fg: BinMask,
    spec: PromptSpec,
    positives: tuple[tuple[int, int], ...] = (),
) -> list[tuple[int, int]]:
    """Lowest-probability background pixels, spread out by a separation radius.

    Candidates are pixels with prob < neg_tau outside `fg`, taken greedily in
    ascending probability (ties by row-major index) subject to pairwise
    Chebyshev distance >= neg_min_sep from already-chosen points and from
    every positive. Fully deterministic; may return fewer than neg_count.
    """
    if coarse.probs.shape != fg.bits.shape:
        raise ValueError("coarse and fg dimensions differ")
    if spec.neg_count == 0:
        return []
    eligible = (coarse.probs < spec.neg_tau) & ~fg.bits
    idx = np.flatnonzero(eligible.ravel())
    if idx.size == 0:
        return []
    order = idx[np.argsort(coarse.probs.ravel()[idx], kind="stable")]
    width = coarse.width
    chosen: list[tuple[int, int]] = []
    for flat in order.tolist():
        pt = (flat // width, flat % width)
        near = any(_chebyshev(pt, q) < spec.neg_min_sep for q in chosen) or any(
            _chebyshev(pt, q) < spec.neg_min_sep for q in positives
        )
        if not near:
            chosen.append(pt)
            if len(chosen) == spec.neg_count:
                break
    return chosen


def _padded_box(bbox: tuple[int, int, int, int], pad: int, dims: tuple[int, int]) -> BoxPrompt:
    r0, c0, r1, c1 = bbox
    h, w = dims
    return BoxPrompt(
        row_min=max(0, r0 - pad),
        col_min=max(0, c0 - pad),
        row_max=min(h - 1, r1 + pad),
        col_max=min(w - 1, c1 + pad),
    )


def _prompts_from_foreground(
    fg: BinMask, neg_source: ProbMask, spec: PromptSpec
) -> list[Prompt] | None:
    """Shared region -> prompt path; None when no region survives the policy."""
    comps = select_regions(label_components(fg), spec.policy)
    if not comps:
        return None
    dims = (fg.height, fg.width)
    if spec.mode == "box":
        return [_padded_box(c.bbox, spec.box_pad, dims) for c in comps]
    positives = tuple(innermost_point(c, dims) for c in comps)
    if spec.split_point_prompts:
        prompts: list[Prompt] = []
        for pos in positives:
            negs = tuple(sample_negatives(neg_source, fg, spec, (pos,)))
            prompts.append(PointPrompt(positives=(pos,), negatives=negs))
        return prompts
    negatives = tuple(sample_negatives(neg_source, fg, spec, positives))
    return [PointPrompt(positives=positives, negatives=negatives)]


def build_prompts(coarse: ProbMask, img: GrayImage, spec: PromptSpec) -> list[Prompt] | None:
    """Turn a coarse prediction (or baseline signal) into segmenter prompts.

    Returns None when the sample is filtered out (no usable region).
    """
    if coarse.probs.shape != img.pixels.shape:
        raise ValueError("coarse mask and image dimensions differ")
    if spec.strategy == "coarse":
        fg = binarize(coarse, spec.binarize_tau)
        return _prompts_from_foreground(fg, coarse, spec)
    if spec.strategy == "darkest":
        return darkest_prompt(img, spec)
    return full_image_box(img, spec)


def darkest_prompt(img: GrayImage, spec: PromptSpec) -> list[Prompt] | None:
    """Baseline: prompt from the darkest pixels of the image itself.

    Pixels at or below the 5th intensity percentile count as foreground, then
    the usual region -> prompt path applies. Negatives for point mode come
    from a darkness pseudo-probability (darker = higher), so "low
    probability" selects the brightest pixels.
    """
    cut = float(np.percentile(img.pixels, DARKEST_PERCENTILE))
    fg_bits = img.pixels <= cut
    if fg_bits.all():
        return None  # no contrast: the percentile set degenerates to the whole frame
    lo = float(img.pixels.min())
    hi = float(img.pixels.max())
    darkness = (hi - img.pixels) / (hi - lo)
    return _prompts_from_foreground(BinMask(fg_bits), ProbMask(darkness), spec)


def full_image_box(img: GrayImage, spec: PromptSpec) -> list[Prompt]:
    """Baseline: one box inset box_pad pixels from every image edge."""
    if spec.box_pad >= min(img.width, img.height) / 2:
        raise ValueError(
            f"box_pad {spec.box_pad} too large for {img.width}x{img.height} image"
        )
    return [
        BoxPrompt(
            row_min=spec.box_pad,
            col_min=spec.box_pad,
            row_max=img.height - 1 - spec.box_pad,
            col_max=img.width - 1 - spec.box_pad,
        )
    ]
