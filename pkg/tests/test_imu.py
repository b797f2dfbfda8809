import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmevit import imu
from mmevit.data import IMUSegment
from mmevit.exceptions import ValidationError


def naive_count(T, window, stride):
    return sum(1 for s in range(0, T) if s + window <= T and s % stride == 0)


@given(st.integers(0, 400), st.integers(1, 150), st.integers(1, 150))
def test_window_count_matches_enumeration(T, window, stride):
    assert imu.window_count(T, window, stride) == naive_count(T, window, stride)


def test_window_count_rejects_zero():
    with pytest.raises(ValidationError):
        imu.window_count(10, 0, 1)


def test_zscore_pools_modalities():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 12)) * 3 + 1
    x[:, imu.GYR_COLUMNS] *= 10
    out = imu.zscore_normalize(IMUSegment("p", 1, x), eps=0.0).samples
    for cols in (imu.ACC_COLUMNS, imu.GYR_COLUMNS):
        block = out[:, cols]
        assert abs(block.mean()) < 1e-12 and abs(block.std() - 1) < 1e-12
    # one scalar pair per modality, so per-column stats are not forced to 0/1
    assert not np.allclose(out[:, 0].mean(), 0.0)


def test_zscore_uses_supplied_stats():
    x = np.ones((4, 12))
    stats = imu.ModalityStats(1.0, 2.0, 0.0, 4.0)
    out = imu.zscore_normalize(IMUSegment("p", 1, x), eps=0.0, stats=stats).samples
    assert np.allclose(out[:, imu.ACC_COLUMNS], 0.0) and np.allclose(out[:, imu.GYR_COLUMNS], 0.25)


def test_zscore_constant_segment_is_finite():
    out = imu.zscore_normalize(IMUSegment("p", 1, np.full((5, 12), 2.0))).samples
    assert np.all(out == 0.0)
    with pytest.raises(ValidationError):
        imu.zscore_normalize(IMUSegment("p", 1, np.zeros((1, 12))))


def test_image_layout_round_trip():
    x = np.arange(24.0).reshape(2, 12)
    img = imu.to_image(x)
    assert img.shape == (2, 4, 3)
    # domain 1 is left-hand gyroscope: columns 3..5
    assert np.array_equal(img[0, 1], [3, 4, 5])
    assert np.array_equal(imu.from_image(img), x)


def test_sliding_window_positions():
    img = np.arange(10.0)[:, None, None] * np.ones((1, 4, 3))
    wins = imu.sliding_window(img, window=4, stride=3, segment_id="s")
    assert [w.start for w in wins] == [0, 3, 6]
    assert np.array_equal(wins[1].pixels[:, 0, 0], [3, 4, 5, 6])


def test_short_segment_raises_or_pads():
    img = np.arange(5.0)[:, None, None] * np.ones((1, 4, 3))
    with pytest.raises(ValidationError):
        imu.sliding_window(img, window=8, stride=2)
    wins = imu.sliding_window(img, window=8, stride=2, pad=True)
    assert len(wins) == 1
    assert np.array_equal(wins[0].pixels[:, 0, 0], [0, 1, 2, 3, 4, 3, 2, 1])


def test_reflect_pad_long_and_single():
    assert np.array_equal(imu.reflect_pad(np.array([0.0, 1.0]), 5), [0, 1, 0, 1, 0])
    assert np.array_equal(imu.reflect_pad(np.array([7.0]), 3), [7, 7, 7])


def test_segment_windows_shape():
    seg = IMUSegment("p", 1, np.random.default_rng(0).normal(size=(300, 12)))
    assert imu.segment_windows(seg, 120, 60).shape == (4, 120, 4, 3)
