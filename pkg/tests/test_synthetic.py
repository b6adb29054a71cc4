import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stdvos.attention import ConfigError
from stdvos.synthetic import (DatasetSpec, FormatError, ObjectSpec, SceneSpec, annotation_schema, easy_scene,
                              generate, generate_dataset, load, load_dataset, save, tight_box)


def _static_rect(size=(10, 6), pos=(20.0, 30.0)):
    obj = ObjectSpec(size=size, position=pos, velocity=(0.0, 0.0), deform_amplitude=0.0)
    return SceneSpec(height=48, width=64, n_frames=4, objects=[obj], background="solid", seed=1)


def test_same_seed_same_video():
    a, b = generate(easy_scene(7)), generate(easy_scene(7))
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.masks, b.masks)
    assert not np.array_equal(a.frames, generate(easy_scene(8)).frames)


def test_static_rectangle_has_exact_pixel_count():
    v = generate(_static_rect())
    assert v.masks.shape == (1, 4, 48, 64)
    assert all(v.masks[0, t].sum() == 60 for t in range(4))
    assert np.array_equal(v.masks[0, 0], v.masks[0, 3])
    assert v.boxes[0, 0].tolist() == [15, 27, 25, 33]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_boxes_are_tight_and_objects_disjoint(seed):
    v = generate(easy_scene(seed))
    for k in range(len(v.ids)):
        for t in range(v.n_frames):
            assert tight_box(v.masks[k, t]) == tuple(v.boxes[k, t])
    assert not (v.masks[0] & v.masks[1]).any()


def test_occluded_masks_are_visible_parts_inside_full_box():
    a = ObjectSpec(size=(20, 20), position=(30.0, 30.0), velocity=(0.0, 0.0), deform_amplitude=0.0)
    b = ObjectSpec(size=(20, 20), position=(40.0, 30.0), velocity=(0.0, 0.0), deform_amplitude=0.0)
    v = generate(SceneSpec(height=64, width=64, n_frames=2, objects=[a, b], occlusion=True))
    assert not (v.masks[0] & v.masks[1]).any()
    assert v.masks[1, 0].sum() == 200
    # the back object's box still covers the whole shape
    assert v.boxes[1, 0].tolist() == [30, 20, 50, 40]


def test_overlap_without_occlusion_is_rejected():
    a = ObjectSpec(size=(20, 20), position=(30.0, 30.0), velocity=(0.0, 0.0), deform_amplitude=0.0)
    with pytest.raises(ConfigError):
        generate(SceneSpec(objects=[a, a]))


@pytest.mark.parametrize("bad", [{"height": 4}, {"n_frames": 1}, {"objects": []}, {"background": "noise"},
                                 {"objects": [{"shape": "star"}]}, {"colour": 1}])
def test_invalid_scene_specs(bad):
    with pytest.raises(ConfigError):
        SceneSpec.from_dict(bad)


def test_save_load_round_trip(tmp_path):
    v = generate(easy_scene(3))
    save(v, tmp_path / "v")
    back = load(tmp_path / "v")
    assert np.array_equal(back.frames, v.frames)
    assert np.array_equal(back.masks, v.masks)
    assert np.array_equal(back.boxes, v.boxes)
    assert back.ids == v.ids and back.spec == v.spec
    jsonschema.validate(json.loads((tmp_path / "v" / "annotations.json").read_text()), annotation_schema())


def test_missing_frame_names_the_path(tmp_path):
    save(generate(easy_scene(3)), tmp_path / "v")
    (tmp_path / "v" / "frames" / "00004.png").unlink()
    with pytest.raises(FormatError, match="00004.png"):
        load(tmp_path / "v")


def test_bad_annotations(tmp_path):
    with pytest.raises(FormatError, match="annotations.json"):
        load(tmp_path)
    (tmp_path / "annotations.json").write_text('{"height": "big"}')
    with pytest.raises(FormatError):
        load(tmp_path)


def test_dataset_generation_is_reproducible(tmp_path):
    spec = DatasetSpec.from_dict({"num_videos": 3, "seed": 4, "scene": {"n_frames": 5}})
    vids = generate_dataset(spec, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 3
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(vids, back))
    with pytest.raises(ConfigError):
        DatasetSpec.from_dict({"videos": 3})
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "nope")
