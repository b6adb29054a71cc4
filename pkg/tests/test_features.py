import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import random_pyramid
from oracles import bilinear
from stdvos.features import (Backbone, ClipFeatures, FeatureLevel, FeaturePyramid, FrameTooSmallError,
                             bilinear_gather, bilinear_sample, extract_pyramid, frame_to_tensor,
                             load_pyramid, rescale_point, save_pyramid)


def test_sampling_at_texel_centers_returns_the_texel():
    data = torch.arange(24, dtype=torch.float64).reshape(2, 3, 4)
    level = FeatureLevel(data, 0, 8)
    for j in range(3):
        for i in range(4):
            assert torch.equal(bilinear_sample(level, (i, j)), data[:, j, i])


def test_rescale_maps_reference_grid_onto_centers():
    level = FeatureLevel(torch.zeros(1, 4, 8), 0, 8)
    assert rescale_point((3 / 8, 1 / 4), level) == (3.0, 1.0)
    with pytest.raises(ValueError):
        rescale_point((1.2, 0.5), level)


def test_zero_padding_outside():
    data = torch.ones(1, 2, 2, dtype=torch.float64)
    assert float(bilinear_sample(data, (-1.0, 0.0))) == 0.0
    assert float(bilinear_sample(data, (-0.5, 0.0))) == pytest.approx(0.5)
    assert float(bilinear_sample(data, (1.5, 1.5))) == pytest.approx(0.25)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**16), st.floats(-2, 7), st.floats(-2, 6))
def test_gather_matches_scalar_oracle(seed, x, y):
    fmap = np.random.default_rng(seed).standard_normal((3, 5, 6))
    got = bilinear_gather(torch.from_numpy(fmap)[None], torch.tensor([[[x, y]]], dtype=torch.float64))
    assert np.allclose(got[0, 0].numpy(), bilinear(fmap, x, y), atol=1e-12)


def test_gather_gradients():
    fmap = torch.randn(1, 2, 4, 5, dtype=torch.float64, requires_grad=True)
    pts = torch.tensor([[[1.3, 2.6], [0.2, 0.7], [3.9, -0.4]]], dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(bilinear_gather, (fmap, pts))


def test_pyramid_requires_halving():
    a = FeatureLevel(torch.zeros(2, 8, 8), 0, 8)
    with pytest.raises(ValueError):
        FeaturePyramid((a, FeatureLevel(torch.zeros(2, 3, 4), 1, 16)))
    FeaturePyramid((a, FeatureLevel(torch.zeros(2, 4, 4), 1, 16)))


def test_levels_need_two_by_two():
    with pytest.raises(ValueError):
        FeatureLevel(torch.zeros(2, 1, 4), 0, 8)


def test_backbone_shapes_and_size_check():
    bb = Backbone(channels=8, num_levels=3, first_stride=4, hidden=4)
    assert bb.strides == [4, 8, 16]
    assert bb.level_shapes(64, 48) == [(16, 12), (8, 6), (4, 3)]
    pyr = extract_pyramid(np.zeros((64, 48, 3), np.uint8), bb, frame_index=5)
    assert pyr.shapes == [(16, 12), (8, 6), (4, 3)] and pyr.frame_index == 5
    with pytest.raises(FrameTooSmallError):
        bb.check_size(16, 64)


def test_frame_to_tensor_scaling():
    t = frame_to_tensor(np.full((2, 3, 3), 255, np.uint8), torch.float64)
    assert t.shape == (3, 2, 3) and float(t.max()) == 1.0
    with pytest.raises(ValueError):
        frame_to_tensor(np.zeros((2, 3)))


def test_clip_features_validation():
    rng = np.random.default_rng(0)
    pyrs = tuple(random_pyramid(rng, 4, 2, 8, 8, t) for t in range(3))
    clip = ClipFeatures(pyrs, 1, 1)
    stacked = clip.stacked()
    assert [tuple(s.shape) for s in stacked] == [(3, 4, 8, 8), (3, 4, 4, 4)]
    with pytest.raises(ValueError):
        ClipFeatures(pyrs[:2], 1, 1)


def test_pyramid_dump_round_trip(tmp_path):
    pyr = random_pyramid(np.random.default_rng(1), 3, 2, 6, 6, 4)
    save_pyramid(pyr, tmp_path)
    back = load_pyramid(tmp_path)
    assert back.frame_index == 4
    for a, b in zip(pyr.levels, back.levels):
        assert torch.equal(a.data, b.data) and a.stride == b.stride
