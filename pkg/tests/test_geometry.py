import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from detkit.geometry import Box, Detection, SizeClass, clip, hflip_box, iou, keep_box, size_class

unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(unit), draw(unit)))
    y1, y2 = sorted((draw(unit), draw(unit)))
    return Box(x1, y1, x2, y2)


def test_iou_identity():
    assert iou(Box(0, 0, 1, 1), Box(0, 0, 1, 1)) == 1.0


def test_iou_disjoint():
    assert iou(Box(0, 0, 0.3, 0.3), Box(0.5, 0.5, 1, 1)) == 0.0


def test_iou_partial_overlap():
    # intersection 0.1*0.1, union 0.04 + 0.04 - 0.01
    assert iou(Box(0, 0, 0.2, 0.2), Box(0.1, 0.1, 0.3, 0.3)) == pytest.approx(1 / 7, abs=1e-12)


def test_iou_zero_area_boxes():
    p = Box(0.5, 0.5, 0.5, 0.5)
    assert iou(p, p) == 0.0
    assert iou(p, Box(0, 0, 1, 1)) == 0.0


@pytest.mark.parametrize(
    "raw, expected",
    [
        ((-0.1, 0.2, 0.5, 1.3), (0, 0.2, 0.5, 1.0)),
        ((0.1, 0.1, 0.9, 0.9), (0.1, 0.1, 0.9, 0.9)),
        ((1.2, 0.5, 1.4, 0.6), (1.0, 0.5, 1.0, 0.6)),
    ],
)
def test_clip(raw, expected):
    assert clip(Box(*raw)) == Box(*expected)


def test_clip_restores_ordering():
    assert clip(Box(0.8, 0.9, 0.2, 0.1)) == Box(0.2, 0.1, 0.8, 0.9)


@pytest.mark.parametrize("side, expected", [(31, SizeClass.SMALL), (64, SizeClass.MEDIUM), (100, SizeClass.LARGE)])
def test_size_class(side, expected):
    w, h = 400, 300
    b = Box(10 / w, 20 / h, (10 + side) / w, (20 + side) / h)
    assert size_class(b, w, h) is expected


def test_size_class_boundaries():
    assert size_class(Box(0, 0, 32 / 100, 32 / 100), 100, 100) is SizeClass.MEDIUM
    assert size_class(Box(0, 0, 96 / 200, 96 / 200), 200, 200) is SizeClass.LARGE


def test_size_class_rejects_bad_dims():
    with pytest.raises(ValueError):
        size_class(Box(0, 0, 1, 1), 0, 10)


def test_detection_score_range():
    Detection(Box(0, 0, 1, 1), 0, 1.0)
    with pytest.raises(ValueError):
        Detection(Box(0, 0, 1, 1), 0, 1.5)
    with pytest.raises(ValueError):
        Detection(Box(0, 0, 1, 1), 0, math.nan)


def test_keep_box():
    assert not keep_box(Box(0.2, 0.2, 0.2, 0.5))
    assert not keep_box(Box(0, 0, 1e-4, 1e-4))
    assert keep_box(Box(0, 0, 0.01, 0.01))


def test_coco_pixel_conversion():
    b = Box.from_xywh_px(10, 20, 30, 40, 100, 200)
    assert b == pytest.approx((0.10, 0.10, 0.40, 0.30))
    assert b.to_xywh_px(100, 200) == pytest.approx([10, 20, 30, 40])


@given(boxes(), boxes())
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)


@given(boxes())
def test_iou_self_is_one(a):
    if a.area > 0:
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes(), boxes())
def test_iou_flip_invariant(a, b):
    # 1 - x rounds away widths far below float spacing near 1.0
    assume(min(a.width, b.width, a.height, b.height) == 0 or min(a.width, b.width) > 1e-12)
    assert iou(hflip_box(a), hflip_box(b)) == pytest.approx(iou(a, b), abs=1e-9)


def test_hflip_collapses_subnormal_width():
    b = Box(0.0, 0.0, 1e-300, 1.0)
    assert hflip_box(b).width == 0.0


@given(boxes(), boxes())
def test_iou_range(a, b):
    assert 0.0 <= iou(a, b) <= 1.0 + 1e-12


@given(st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 4))
def test_clip_idempotent_and_valid(raw):
    once = clip(Box(*raw))
    assert once.is_valid()
    assert clip(once) == once
    assert once.area >= 0
