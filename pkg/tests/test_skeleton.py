import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmevit import skeleton as sk
from mmevit.data import SkeletonSequence
from mmevit.exceptions import ValidationError


def seq_from(xy, conf=1.0):
    xy = np.asarray(xy, dtype=np.float64)
    c = np.full(xy.shape[:-1] + (1,), conf)
    return SkeletonSequence("p", 1, np.concatenate([xy, c], axis=-1))


def random_seq(T=6, seed=0):
    return seq_from(np.random.default_rng(seed).uniform(10, 200, size=(T, 53, 2)))


def test_keypoint_layout():
    assert len(sk.KEYPOINT_NAMES) == 53
    assert sk.KEYPOINT_NAMES[11] == "left_hand_wrist" and sk.KEYPOINT_NAMES[32] == "right_hand_wrist"
    perm = sk.FLIP_PERMUTATION
    assert np.array_equal(perm[perm], np.arange(53))
    assert perm[0] == 0 and perm[11] == 32


def test_heatmap_peak_and_e_fold():
    frame = np.zeros((53, 3))
    frame[:, :2] = [5.0, 7.0]
    frame[:, 2] = 0.8
    sigma = 0.6
    hm = sk.keypoint_heatmap(frame, sigma, 16, 16)
    assert hm[0, 7, 5] == pytest.approx(0.8, abs=1e-12)
    # a cell at squared distance 2 sigma is impossible on the integer grid,
    # so check the formula off-grid through a fractional keypoint
    frame[:, 0] = 5.0 - math.sqrt(2 * sigma)
    hm = sk.keypoint_heatmap(frame, sigma, 16, 16)
    assert hm[0, 7, 5] == pytest.approx(0.8 * math.exp(-1), abs=1e-12)


def test_heatmap_sigma_squared_variant():
    frame = np.zeros((53, 3))
    frame[:, :2] = [3.0, 3.0]
    frame[:, 2] = 1.0
    a = sk.keypoint_heatmap(frame, 0.5, 8, 8, sigma_squared=True)[0, 3, 4]
    assert a == pytest.approx(math.exp(-1 / (2 * 0.25)))
    with pytest.raises(ValidationError):
        sk.keypoint_heatmap(frame, 0.0, 8, 8)


def test_zero_confidence_gives_empty_map():
    frame = np.zeros((53, 3))
    assert not sk.keypoint_heatmap(frame, 0.6, 8, 8).any()


def test_normalize_fits_grid_and_keeps_aspect():
    s = random_seq()
    out = sk.normalize_coordinates(s, (56, 56)).frames
    assert out[..., :2].min() >= 0 and out[..., :2].max() <= 55
    src = s.frames[..., :2]
    ratio = (out[1, 3, :2] - out[0, 0, :2]) / (src[1, 3] - src[0, 0])
    assert ratio[0] == pytest.approx(ratio[1])
    # padded box: extremes sit 1/12 of the span in from the border on the long axis
    span = out[..., 0].max() - out[..., 0].min(), out[..., 1].max() - out[..., 1].min()
    assert max(span) == pytest.approx(55 / 1.2)


def test_normalize_ignores_zero_confidence_points():
    s = random_seq()
    f = s.frames.copy()
    f[0, 0] = [1e6, 1e6, 0.0]
    a = sk.normalize_coordinates(s).frames[1:]
    b = sk.normalize_coordinates(SkeletonSequence("p", 1, f)).frames[1:]
    assert np.allclose(a, b)


@given(st.integers(1, 300), st.integers(1, 64))
def test_uniform_indices_match_formula(T, T_out):
    idx = sk.frame_indices(T, T_out)
    ref = [0] if T_out == 1 else [math.floor(i * (T - 1) / (T_out - 1) + 0.5) for i in range(T_out)]
    assert idx.tolist() == ref
    assert idx.min() >= 0 and idx.max() <= T - 1


@given(st.integers(1, 200), st.integers(1, 64), st.integers(0, 2 ** 16))
def test_subsegment_policies_stay_in_bins(T, T_out, seed):
    first = sk.frame_indices(T, T_out, "first-of-subsegment")
    rand = sk.frame_indices(T, T_out, "random-of-subsegment", np.random.default_rng(seed))
    assert np.all(np.diff(first) >= 0)
    assert np.all(rand >= first) and np.all(rand <= T - 1)


def test_frame_indices_errors():
    with pytest.raises(ValidationError):
        sk.frame_indices(0, 4)
    with pytest.raises(ValidationError):
        sk.frame_indices(4, 0)
    with pytest.raises(ValidationError):
        sk.frame_indices(4, 2, "middle")


def test_flip_is_an_involution_and_mirrors_maps():
    s = sk.normalize_coordinates(random_seq(), (16, 16))
    twice = sk.flip_horizontal(sk.flip_horizontal(s, 16), 16)
    assert np.allclose(twice.frames, s.frames)
    v = sk.stack_volume(s, 0.6, 16, 16).values
    vf = sk.stack_volume(sk.flip_horizontal(s, 16), 0.6, 16, 16).values
    assert np.allclose(vf, v[sk.FLIP_PERMUTATION][..., ::-1])


def test_crop_rescales_and_drops_outside():
    s = seq_from(np.array([[[10.0, 10.0]] * 52 + [[50.0, 50.0]]]))
    out = sk.crop(s, (5, 5, 30, 30), (56, 56)).frames
    assert out[0, 0, 0] == pytest.approx((10 - 5) * 55 / 25)
    assert out[0, 52, 2] == 0.0 and out[0, 0, 2] == 1.0
    with pytest.raises(ValidationError):
        sk.crop(s, (5, 5, 5, 30))
    with pytest.raises(ValidationError):
        sk.crop(s, (0, 0, 60, 30))


def test_augment_one_draw_per_segment():
    s = sk.normalize_coordinates(random_seq(T=5), (16, 16))
    spec = sk.AugmentationSpec(flip_prob=1.0, crop_fraction=1.0)
    out = sk.augment(s, spec, np.random.default_rng(0), (16, 16))
    assert np.allclose(out.frames, sk.flip_horizontal(s, 16).frames)
    spec = sk.AugmentationSpec(flip_prob=0.0, crop_fraction=0.5)
    out = sk.augment(s, spec, np.random.default_rng(1), (16, 16))
    # the same affine crop on every frame: displacement per frame is shared
    scale = (out.frames[:, 1, 0] - out.frames[:, 0, 0]) / (s.frames[:, 1, 0] - s.frames[:, 0, 0])
    assert np.allclose(scale, 15 / 7.5)


def test_augmentation_spec_validation():
    for kwargs in ({"flip_prob": 1.5}, {"crop_fraction": 0.0}, {"flip_axis": "vertical"},
                   {"frame_policy": "middle"}):
        with pytest.raises(ValidationError):
            sk.AugmentationSpec(**kwargs)


def test_skeleton_volume_shape_and_determinism():
    s = random_seq(T=20)
    a = sk.skeleton_volume(s, (16, 16), frames=8)
    b = sk.skeleton_volume(s, (16, 16), frames=8)
    assert a.shape == (53, 8, 16, 16) and np.array_equal(a, b)
    spec = sk.AugmentationSpec()
    c = sk.skeleton_volume(s, (16, 16), frames=8, spec=spec, rng=np.random.default_rng(3))
    assert c.shape == a.shape
