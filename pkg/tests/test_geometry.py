import math

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import raster_iou
from stdvos.geometry import (Box, InvalidBoxError, box_iou_xyxy, box_loss, clip_cxcywh, cxcywh_to_xyxy,
                             generalized_box_iou_t, generalized_box_iou_xyxy, giou, iou, paired_giou_t,
                             xyxy_to_cxcywh)

coord = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def boxes(draw):
    x0, x1 = sorted([draw(coord), draw(coord)])
    y0, y1 = sorted([draw(coord), draw(coord)])
    assume(x1 - x0 > 1e-3 and y1 - y0 > 1e-3)
    return Box.from_corners(x0, y0, x1, y1)


def test_iou_one_seventh():
    a, b = Box.from_corners(0, 0, 0.2, 0.2), Box.from_corners(0.1, 0.1, 0.3, 0.3)
    assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)
    assert raster_iou(a.corners(), b.corners()) == pytest.approx(1 / 7, abs=1e-3)


def test_giou_of_disjoint_boxes():
    a, b = Box.from_corners(0, 0, 0.1, 0.1), Box.from_corners(0.2, 0.2, 0.3, 0.3)
    # hull 0.09, union 0.02
    assert giou(a, b) == pytest.approx(-7 / 9, abs=1e-12)
    assert iou(a, b) == 0.0


@settings(max_examples=150)
@given(boxes(), boxes())
def test_iou_bounds_and_symmetry(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert -1.0 <= giou(a, b) <= v + 1e-12


@settings(max_examples=40, deadline=None)
@given(boxes(), boxes())
def test_iou_agrees_with_rasterization(a, b):
    assume(min(a.w, a.h, b.w, b.h) > 0.05)
    assert iou(a, b) == pytest.approx(raster_iou(a.corners(), b.corners()), abs=0.03)


@settings(max_examples=100)
@given(boxes())
def test_self_overlap_and_zero_loss(a):
    assert iou(a, a) == pytest.approx(1.0)
    assert box_loss(a, a) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=100)
@given(boxes())
def test_corner_round_trip(a):
    b = Box.from_corners(*a.corners())
    assert np.allclose(b.to_list(), a.to_list(), atol=1e-12)
    arr = np.array([a.to_list()])
    assert np.allclose(xyxy_to_cxcywh(cxcywh_to_xyxy(arr)), arr, atol=1e-12)


@pytest.mark.parametrize("vals", [(0.5, 0.5, 0.0, 0.1), (0.5, 0.5, 0.1, -0.2), (1.2, 0.5, 0.1, 0.1),
                                  (0.5, 0.5, 1.5, 0.2), (float("nan"), 0.5, 0.1, 0.1)])
def test_invalid_boxes(vals):
    with pytest.raises(InvalidBoxError):
        Box(*vals)


def test_corners_must_be_ordered():
    with pytest.raises(InvalidBoxError):
        Box.from_corners(0.5, 0.1, 0.4, 0.2)


def test_pixel_conversion():
    b = Box.from_pixels(8, 16, 24, 48, width=64, height=64)
    assert b.to_list() == [0.25, 0.5, 0.25, 0.5]
    assert b.to_pixels(64, 64) == (8.0, 16.0, 24.0, 48.0)


@settings(max_examples=100)
@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5), st.floats(-0.3, 2.0), st.floats(-0.3, 2.0))
def test_clip_always_yields_a_valid_box(cx, cy, w, h):
    b = clip_cxcywh((cx, cy, w, h))
    x0, y0, x1, y1 = b.corners()
    assert -1e-12 <= x0 < x1 <= 1 + 1e-12 and -1e-12 <= y0 < y1 <= 1 + 1e-12


def test_box_loss_components():
    a, b = Box(0.5, 0.5, 0.2, 0.2), Box(0.6, 0.5, 0.2, 0.2)
    assert box_loss(a, b, 1.0, 0.0) == pytest.approx(0.025)
    assert box_loss(a, b, 0.0, 1.0) == pytest.approx(1 - 1 / 3)
    with pytest.raises(ValueError):
        box_loss(a, b, -1.0)


def test_degenerate_arrays_raise():
    with pytest.raises(InvalidBoxError):
        box_iou_xyxy([[0.2, 0.2, 0.1, 0.3]], [[0, 0, 1, 1]])


@settings(max_examples=30, deadline=None)
@given(st.lists(boxes(), min_size=1, max_size=4), st.lists(boxes(), min_size=1, max_size=4))
def test_torch_giou_matches_numpy(xs, ys):
    a = np.array([x.corners() for x in xs])
    b = np.array([y.corners() for y in ys])
    want = generalized_box_iou_xyxy(a, b)
    got = generalized_box_iou_t(torch.from_numpy(a), torch.from_numpy(b)).numpy()
    assert np.allclose(got, want, atol=1e-12)
    n = min(len(a), len(b))
    paired = paired_giou_t(torch.from_numpy(a[:n]), torch.from_numpy(b[:n])).numpy()
    assert np.allclose(paired, np.diag(want[:n, :n]), atol=1e-12)


def test_clipped_box():
    b = Box(0.05, 0.5, 0.2, 0.2).clipped()
    assert b.corners()[0] == 0.0
    assert math.isclose(b.w, 0.15)
