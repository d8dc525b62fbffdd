import math

import pytest
from hypothesis import given, strategies as st

from tiledet.geometry import (
    Box,
    EdgeDistances,
    GeometryError,
    TileDims,
    apparent_area,
    boundary_distance,
    clip_box,
    clip_to_tile,
    iou,
    remap_to_global,
    rescale_box,
)

coords = st.floats(min_value=-1000, max_value=1000, allow_nan=False, allow_infinity=False)


def box_strategy(min_size=0.0):
    return st.builds(
        lambda x, y, w, h: Box(x, y, x + w, y + h),
        coords,
        coords,
        st.floats(min_value=min_size, max_value=500),
        st.floats(min_value=min_size, max_value=500),
    )


class TestBox:
    def test_malformed_rejected(self):
        with pytest.raises(GeometryError):
            Box(5, 0, 1, 1)
        with pytest.raises(GeometryError):
            Box(0, 5, 1, 1)

    def test_area_and_dims(self):
        b = Box(1, 2, 4, 8)
        assert b.width == 3 and b.height == 6 and b.area() == 18

    def test_xywh_round_trip(self):
        b = Box.from_xywh(10, 20, 30, 40)
        assert b == Box(10, 20, 40, 60)
        assert b.to_xywh() == (10, 20, 30, 40)

    def test_negative_extent_rejected(self):
        with pytest.raises(GeometryError):
            Box.from_xywh(0, 0, -1, 5)


class TestIou:
    def test_identical(self):
        b = Box(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_hand_case_one_seventh(self):
        # intersection 1, union 4 + 4 - 1 = 7
        assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate_identical_is_one(self):
        b = Box(2, 2, 2, 2)
        assert iou(b, b) == 1.0

    def test_degenerate_distinct_is_zero(self):
        assert iou(Box(2, 2, 2, 2), Box(3, 3, 3, 3)) == 0.0
        assert iou(Box(2, 2, 2, 2), Box(0, 0, 10, 10)) == 0.0

    def test_touching_edges_zero(self):
        assert iou(Box(0, 0, 1, 1), Box(1, 0, 2, 1)) == 0.0

    @given(box_strategy(), box_strategy())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(box_strategy(min_size=0.5))
    def test_self_iou_is_one(self, b):
        assert iou(b, b) == 1.0


class TestBoundaryDistance:
    def test_eq1_hand_case(self):
        d = boundary_distance(Box(10, 300, 50, 340), TileDims(640, 640))
        assert d.nearest == 10
        assert d.as_dict() == {"left": 10, "top": 300, "right": 590, "bottom": 300}

    def test_full_tile_box(self):
        assert boundary_distance(Box(0, 0, 640, 640), TileDims(640, 640)).nearest == 0

    def test_centered_box(self):
        assert boundary_distance(Box(312, 312, 328, 328), TileDims(640, 640)).nearest == 312

    def test_slop_clipping(self):
        d = boundary_distance(Box(-1.5, 10, 30, 50), TileDims(640, 640))
        assert d.left == 0.0 and d.nearest == 0.0

    def test_beyond_slop_rejected(self):
        with pytest.raises(GeometryError):
            boundary_distance(Box(-3.0, 10, 30, 50), TileDims(640, 640))

    def test_entirely_outside_rejected(self):
        with pytest.raises(GeometryError):
            boundary_distance(Box(700, 700, 720, 720), TileDims(640, 640))

    @given(
        st.floats(0, 600), st.floats(0, 600),
        st.floats(1, 39), st.floats(1, 39),
    )
    def test_reflection_symmetry(self, x1, y1, w, h):
        t = TileDims(640, 640)
        b = Box(x1, y1, x1 + w, y1 + h)
        reflected = Box(640 - (x1 + w), 640 - (y1 + h), 640 - x1, 640 - y1)
        assert boundary_distance(b, t).nearest == pytest.approx(
            boundary_distance(reflected, t).nearest
        )

    def test_clip_to_tile(self):
        b = clip_to_tile(Box(-1.0, 5, 641.0, 600), TileDims(640, 640))
        assert b == Box(0, 5, 640, 600)


class TestClipBox:
    def test_fully_inside_identity(self):
        b = Box(1, 1, 2, 2)
        clipped, fraction = clip_box(b, Box(0, 0, 10, 10))
        assert clipped == b and fraction == 1.0

    def test_half_overlap(self):
        clipped, fraction = clip_box(Box(0, 0, 10, 10), Box(5, 0, 20, 10))
        assert clipped == Box(5, 0, 10, 10)
        assert fraction == 0.5

    def test_disjoint(self):
        assert clip_box(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == (None, 0.0)

    def test_zero_area_input(self):
        assert clip_box(Box(1, 1, 1, 1), Box(0, 0, 10, 10)) == (None, 0.0)

    @given(box_strategy(min_size=0.25), box_strategy(min_size=0.25))
    def test_fraction_bounds_and_containment(self, b, rect):
        clipped, fraction = clip_box(b, rect)
        assert 0.0 <= fraction <= 1.0
        if rect.contains(b):
            assert fraction == pytest.approx(1.0)
        if fraction == 1.0 and clipped is not None:
            assert rect.x1 <= clipped.x1 and clipped.x2 <= rect.x2


class TestRemapRescale:
    def test_translation(self):
        assert remap_to_global(Box(10, 10, 20, 20), (512, 0)) == Box(522, 10, 532, 20)

    def test_zero_origin_identity(self):
        b = Box(1, 2, 3, 4)
        assert remap_to_global(b, (0, 0)) == b

    def test_round_trip_bit_exact(self):
        b = Box(10.25, 11.5, 20.125, 21.75)
        g = remap_to_global(b, (512, 128))
        back = remap_to_global(g, (-512, -128))
        assert back == b

    @given(box_strategy(), st.tuples(coords, coords))
    def test_remap_preserves_dims(self, b, origin):
        g = remap_to_global(b, origin)
        assert g.width == pytest.approx(b.width)
        assert g.height == pytest.approx(b.height)

    def test_rescale_identity_and_half(self):
        b = Box(0, 0, 100, 100)
        assert rescale_box(b, 1.0) == b
        assert rescale_box(b, 0.5) == Box(0, 0, 50, 50)

    def test_rescale_inverse(self):
        b = Box(3.5, 4.25, 103.5, 88.0)
        back = rescale_box(rescale_box(b, 3.7), 1 / 3.7)
        for got, want in zip(back.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, rel=1e-9)

    def test_rescale_rejects_nonpositive(self):
        with pytest.raises(GeometryError):
            rescale_box(Box(0, 0, 1, 1), 0.0)
        with pytest.raises(GeometryError):
            rescale_box(Box(0, 0, 1, 1), -2.0)


class TestApparentArea:
    def test_arithmetic_case(self):
        b = Box(0, 0, 80, 80)  # 6400 px^2
        assert apparent_area(b, 5120, 4000, 640) == pytest.approx(100.0)

    def test_unit_scale(self):
        b = Box(0, 0, 30, 40)
        assert apparent_area(b, 2000, 1000, 2000) == pytest.approx(b.area())

    @given(
        box_strategy(min_size=1.0),
        st.integers(100, 4000),
        st.integers(100, 4000),
        st.floats(0.1, 4.0),
    )
    def test_scale_law(self, b, w, h, k):
        area = apparent_area(b, w, h, int(k * max(w, h)))
        expected = b.area() * (int(k * max(w, h)) / max(w, h)) ** 2
        assert area == pytest.approx(expected, rel=1e-9)
