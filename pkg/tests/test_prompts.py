import numpy as np
import pytest

from wlforge.prompts import (
    BoxPrompt,
    PointPrompt,
    PromptSpec,
    build_prompts,
    darkest_prompt,
    full_image_box,
    sample_negatives,
)
from wlforge.raster import GrayImage, ProbMask, binarize
from wlforge.regions import RegionPolicy
from tests.test_regions import flood_fill_partition


def _flat_image(h=32, w=32, value=0.5) -> GrayImage:
    return GrayImage(np.full((h, w), value))


def _prob(arr) -> ProbMask:
    return ProbMask(np.asarray(arr, dtype=np.float64))


# --- build_prompts -------------------------------------------------------------


def test_empty_coarse_filters_sample():
    coarse = _prob(np.zeros((32, 32)))
    assert build_prompts(coarse, _flat_image(), PromptSpec(mode="box")) is None
    assert build_prompts(coarse, _flat_image(), PromptSpec(mode="points")) is None


def test_solid_block_box():
    probs = np.zeros((32, 32))
    probs[5:15, 5:15] = 1.0
    out = build_prompts(_prob(probs), _flat_image(), PromptSpec(mode="box", box_pad=0))
    assert out == [BoxPrompt(5, 5, 14, 14)]


def test_box_padding_clamped():
    probs = np.zeros((20, 20))
    probs[0:4, 0:4] = 1.0
    out = build_prompts(_prob(probs), _flat_image(20, 20), PromptSpec(mode="box", box_pad=3))
    assert out == [BoxPrompt(0, 0, 6, 6)]


def test_two_blocks_points_mode():
    probs = np.zeros((40, 40))
    probs[2:12, 2:12] = 1.0  # area 100
    probs[20:30, 20:28] = 1.0  # area 80
    spec = PromptSpec(mode="points", policy=RegionPolicy(0.25, 10, 3))
    out = build_prompts(_prob(probs), _flat_image(40, 40), spec)
    assert len(out) == 1 and isinstance(out[0], PointPrompt)
    positives = out[0].positives
    assert len(positives) == 2
    comps = flood_fill_partition(probs >= 0.5, 8)
    for pos in positives:
        assert any(pos in comp for comp in comps)
    # one positive per block
    blocks = [comp for comp in comps for pos in positives if pos in comp]
    assert len(set(map(frozenset, blocks))) == 2


def test_small_block_excluded():
    probs = np.zeros((40, 40))
    probs[2:12, 2:12] = 1.0  # area 100
    probs[30, 30] = 1.0  # speck
    spec = PromptSpec(mode="box", policy=RegionPolicy(0.25, 10, 3), box_pad=0)
    out = build_prompts(_prob(probs), _flat_image(40, 40), spec)
    assert out == [BoxPrompt(2, 2, 11, 11)]


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        build_prompts(_prob(np.zeros((4, 4))), _flat_image(8, 8), PromptSpec())


def test_prompts_deterministic():
    rng = np.random.default_rng(21)
    probs = rng.random((32, 32))
    img = GrayImage(rng.random((32, 32)))
    spec = PromptSpec(mode="points", seed=5)
    a = build_prompts(_prob(probs), img, spec)
    b = build_prompts(_prob(probs), img, spec)
    assert a == b


def test_boxes_always_in_bounds():
    rng = np.random.default_rng(22)
    for _ in range(50):
        probs = (rng.random((24, 24)) < 0.3).astype(float)
        out = build_prompts(_prob(probs), _flat_image(24, 24), PromptSpec(mode="box", box_pad=4))
        if out is None:
            continue
        for box in out:
            assert 0 <= box.row_min <= box.row_max < 24
            assert 0 <= box.col_min <= box.col_max < 24


def test_point_prompt_membership_properties():
    rng = np.random.default_rng(23)
    spec = PromptSpec(mode="points")
    for _ in range(50):
        probs = rng.random((24, 24))
        out = build_prompts(_prob(probs), _flat_image(24, 24), spec)
        fg = probs >= spec.binarize_tau
        if out is None:
            continue
        pp = out[0]
        for r, c in pp.positives:
            assert fg[r, c]
        for r, c in pp.negatives:
            assert not fg[r, c]
            assert probs[r, c] < spec.neg_tau


def test_absent_iff_no_surviving_region():
    rng = np.random.default_rng(24)
    spec = PromptSpec(mode="box", policy=RegionPolicy(0.25, 10, 3))
    for _ in range(100):
        probs = (rng.random((16, 16)) < rng.uniform(0, 0.15)).astype(float)
        fg = binarize(_prob(probs), spec.binarize_tau)
        from wlforge.regions import label_components, select_regions

        survives = bool(select_regions(label_components(fg), spec.policy))
        out = build_prompts(_prob(probs), _flat_image(16, 16), spec)
        assert (out is not None) == survives


def test_split_point_prompts_flag():
    probs = np.zeros((40, 40))
    probs[2:12, 2:12] = 1.0
    probs[20:30, 20:28] = 1.0
    spec = PromptSpec(mode="points", split_point_prompts=True)
    out = build_prompts(_prob(probs), _flat_image(40, 40), spec)
    assert len(out) == 2
    assert all(len(p.positives) == 1 for p in out)


# --- sample_negatives ----------------------------------------------------------


def test_negatives_none_eligible():
    coarse = _prob(np.full((16, 16), 0.9))
    fg = binarize(coarse, 0.5)
    assert sample_negatives(coarse, fg, PromptSpec(neg_tau=0.1)) == []


def test_negatives_exact_three():
    probs = np.full((32, 32), 0.4)
    probs[0, 0] = probs[15, 15] = probs[31, 31] = 0.0
    coarse = _prob(probs)
    fg = binarize(coarse, 0.5)
    out = sample_negatives(coarse, fg, PromptSpec(neg_count=3, neg_tau=0.1, neg_min_sep=8))
    assert sorted(out) == [(0, 0), (15, 15), (31, 31)]


def test_negatives_predicates_hold():
    rng = np.random.default_rng(25)
    spec = PromptSpec(neg_count=3, neg_tau=0.1, neg_min_sep=8)
    for _ in range(50):
        probs = rng.random((32, 32)) * 0.6
        coarse = _prob(probs)
        fg = binarize(coarse, spec.binarize_tau)
        positives = ((5, 5),)
        out = sample_negatives(coarse, fg, spec, positives)
        assert len(out) <= spec.neg_count
        for i, (r, c) in enumerate(out):
            assert probs[r, c] < spec.neg_tau
            assert not fg.bits[r, c]
            for rr, cc in list(out[:i]) + list(positives):
                assert max(abs(r - rr), abs(c - cc)) >= spec.neg_min_sep


def test_negatives_greedy_order():
    probs = np.full((16, 16), 0.5)
    probs[2, 2] = 0.01
    probs[2, 3] = 0.02  # too close to (2,2), must be skipped
    probs[12, 12] = 0.03
    coarse = _prob(probs)
    fg = binarize(coarse, 0.5)
    out = sample_negatives(coarse, fg, PromptSpec(neg_count=2, neg_tau=0.1, neg_min_sep=4))
    assert out == [(2, 2), (12, 12)]


# --- darkest_prompt ------------------------------------------------------------


def test_darkest_dark_disk():
    img = np.full((64, 64), 0.8)
    yy, xx = np.mgrid[0:64, 0:64]
    disk = (yy - 32) ** 2 + (xx - 32) ** 2 <= 10 ** 2
    img[disk] = 0.1
    out = darkest_prompt(GrayImage(img), PromptSpec(mode="box", box_pad=0))
    assert out is not None and len(out) == 1
    box = out[0]
    # the darkest 5% sits inside the disk; its bbox nests within the disk bbox
    assert 22 <= box.row_min and box.row_max <= 42
    assert 22 <= box.col_min and box.col_max <= 42
    # and covers a non-trivial chunk around the center
    assert box.row_min < 32 < box.row_max and box.col_min < 32 < box.col_max


def test_darkest_constant_image_absent():
    assert darkest_prompt(_flat_image(), PromptSpec(mode="box")) is None


def test_darkest_via_build_prompts_strategy():
    # dark region must exceed the 5% percentile mass on a constant background,
    # otherwise the threshold lands on the background value and the sample is
    # (correctly) filtered as degenerate
    img = np.full((64, 64), 0.8)
    img[10:30, 10:30] = 0.05
    coarse = _prob(np.zeros((64, 64)))
    out = build_prompts(coarse, GrayImage(img), PromptSpec(mode="box", strategy="darkest"))
    assert out is not None
    small = np.full((64, 64), 0.8)
    small[10:20, 10:20] = 0.05  # under 5% of pixels
    out2 = build_prompts(coarse, GrayImage(small), PromptSpec(mode="box", strategy="darkest"))
    assert out2 is None


def test_darkest_points_mode_negatives_are_bright():
    img = np.full((64, 64), 0.9)
    img[10:30, 10:30] = 0.05
    out = darkest_prompt(GrayImage(img), PromptSpec(mode="points"))
    assert out is not None
    pp = out[0]
    for r, c in pp.positives:
        assert img[r, c] < 0.5
    for r, c in pp.negatives:
        assert img[r, c] > 0.5


# --- full_image_box ------------------------------------------------------------


def test_full_box_no_pad():
    out = full_image_box(_flat_image(256, 256), PromptSpec(box_pad=0))
    assert out == [BoxPrompt(0, 0, 255, 255)]


def test_full_box_pad_16():
    out = full_image_box(_flat_image(256, 256), PromptSpec(box_pad=16))
    assert out == [BoxPrompt(16, 16, 239, 239)]


def test_full_box_pad_too_large():
    with pytest.raises(ValueError):
        full_image_box(GrayImage(np.zeros((50, 100))), PromptSpec(box_pad=30))


# --- spec validation -----------------------------------------------------------


def test_spec_invariants():
    with pytest.raises(ValueError):
        PromptSpec(neg_tau=0.6, binarize_tau=0.5)
    with pytest.raises(ValueError):
        PromptSpec(neg_min_sep=0)
    with pytest.raises(ValueError):
        PromptSpec(box_pad=-1)
    with pytest.raises(ValueError):
        PromptSpec(mode="scribble")


def test_point_prompt_invariants():
    with pytest.raises(ValueError):
        PointPrompt(positives=())
    with pytest.raises(ValueError):
        PointPrompt(positives=((1, 1),), negatives=((1, 1),))
