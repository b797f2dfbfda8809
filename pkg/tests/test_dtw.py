import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from mmevit import dtw
from mmevit.exceptions import ShapeError, ValidationError

series = hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-10, 10))


def table_dtw(a, b, band=None):
    """Full (n+1) x (m+1) table, written independently of the kernel."""
    n, m = len(a), len(b)
    w = max(n, m) if band is None else max(band, abs(n - m))
    D = [[math.inf] * (m + 1) for _ in range(n + 1)]
    D[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if abs(i - j) <= w:
                D[i][j] = (a[i - 1] - b[j - 1]) ** 2 + min(D[i - 1][j], D[i][j - 1], D[i - 1][j - 1])
    return D[n][m]


def path_dtw(a, b):
    """Minimum over every monotone warping path, by explicit enumeration."""
    n, m = len(a), len(b)
    best = math.inf

    def walk(i, j, cost):
        nonlocal best
        cost += (a[i] - b[j]) ** 2
        if cost >= best:
            return
        if (i, j) == (n - 1, m - 1):
            best = cost
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best


def test_hand_value():
    assert dtw.dtw_1d([0, 0], [1, 1]) == 2.0
    assert dtw.dtw_1d([1, 2, 3], [1, 2, 2, 3]) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=rng.integers(1, 6)), rng.normal(size=rng.integers(1, 6))
    assert dtw.dtw_1d(a, b) == pytest.approx(path_dtw(a, b), rel=1e-12)


@given(series, series, st.one_of(st.none(), st.integers(0, 5)))
def test_matches_full_table(a, b, band):
    assert dtw.dtw_1d(a, b, band) == pytest.approx(table_dtw(a, b, band), rel=1e-12, abs=1e-12)


@given(series, series)
def test_properties(a, b):
    assert dtw.dtw_1d(a, a) == 0.0
    assert dtw.dtw_1d(a, b) == pytest.approx(dtw.dtw_1d(b, a), rel=1e-12, abs=1e-12)
    assert dtw.dtw_1d(a, b) >= 0.0
    # a band can only remove paths
    assert dtw.dtw_1d(a, b, 0) >= dtw.dtw_1d(a, b) - 1e-9


def test_multivariate_modes():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    matched = np.mean([table_dtw(A[:, c], B[:, c]) for c in range(3)])
    cross = sum(table_dtw(A[:, i], B[:, j]) for i, j in itertools.product(range(3), repeat=2)) / 3
    assert dtw.multivariate_dtw(A, B) == pytest.approx(matched)
    assert dtw.multivariate_dtw(A, B, "cross") == pytest.approx(cross)
    assert dtw.multivariate_dtw(A[:, 0], B[:, 0]) == pytest.approx(dtw.dtw_1d(A[:, 0], B[:, 0]))


def test_input_errors():
    with pytest.raises(ValidationError):
        dtw.dtw_1d([], [1.0])
    with pytest.raises(ShapeError):
        dtw.dtw_1d(np.zeros((2, 2)), [1.0])
    with pytest.raises(ValidationError):
        dtw.dtw_1d([1.0], [1.0], band=-1)
    with pytest.raises(ShapeError):
        dtw.multivariate_dtw(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        dtw.multivariate_dtw(np.zeros((3, 2)), np.zeros((3, 2)), mode="sum")


def test_thread_count(monkeypatch):
    monkeypatch.setenv("MMEVIT_THREADS", "3")
    assert dtw.thread_count() == 3
    assert dtw.thread_count(2) == 2
    monkeypatch.setenv("MMEVIT_THREADS", "x")
    with pytest.raises(ValidationError):
        dtw.thread_count()
    with pytest.raises(ValidationError):
        dtw.thread_count(-1)


def test_pairwise_parallel_equals_serial():
    rng = np.random.default_rng(1)
    data = [rng.normal(size=(rng.integers(5, 15), 2)) for _ in range(7)]
    serial = dtw.pairwise_matrix(data, threads=1)
    parallel = dtw.pairwise_matrix(data, threads=4)
    assert np.array_equal(serial.values, parallel.values)
    v = serial.values
    assert np.array_equal(v, v.T) and not np.diag(v).any()
    assert v[1, 4] == dtw.multivariate_dtw(data[1], data[4])
    with pytest.raises(ValidationError):
        dtw.pairwise_matrix(data[:1])
    with pytest.raises(ShapeError):
        dtw.pairwise_matrix([np.zeros((3, 2)), np.zeros((3, 1))])


def test_label_summary_and_merges(tmp_path):
    v = np.array([
        [0, 1, 5, 5, 9, 9],
        [1, 0, 5, 5, 9, 9],
        [5, 5, 0, 3, 9, 9],
        [5, 5, 3, 0, 9, 9],
        [9, 9, 9, 9, 0, 2],
        [9, 9, 9, 9, 2, 0],
    ], dtype=float)
    m = dtw.DtwMatrix(v, list("abcdef"), [1, 1, 2, 2, 3, 3], "matched")
    s = dtw.label_similarity_summary(m)
    assert s.labels == [1, 2, 3]
    assert np.allclose(s.means, [[1, 5, 9], [5, 3, 9], [9, 9, 2]])
    assert s.pairs()[0] == (1, 2, 5.0)
    # cross-label mean is 23/3; 5 <= 0.7 * 23/3 but 9 is not
    assert dtw.suggest_merges(s, threshold=0.7) == [(1, 2)]
    assert dtw.suggest_merges(s, threshold=0.3) == []
    s.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[:2] == ["label_a,label_b,mean_dtw", "1,1,1.0"]
    single = dtw.label_similarity_summary(dtw.DtwMatrix(v[:3, :3], list("abc"), [1, 1, 2], "matched"))
    assert math.isnan(single.means[1, 1])


def test_merges_are_non_overlapping():
    means = np.array([[0, 1, 1.5, 9], [1, 0, 9, 9], [1.5, 9, 0, 2], [9, 9, 2, 0]], dtype=float)
    out = dtw.suggest_merges(dtw.LabelSummary([1, 2, 3, 4], means), threshold=1.0)
    assert out == [(1, 2), (3, 4)]


def test_segment_series(tiny_corpus):
    samples, _ = tiny_corpus
    s = samples[0]
    x = dtw.segment_series(s, "imu")
    assert x.shape == (s.imu.T, 12)
    y = dtw.segment_series(s, "skeleton", step=2)
    assert y.shape == ((s.skeleton.T + 1) // 2, 106) and y.min() >= 0 and y.max() <= 1
    with pytest.raises(ValidationError):
        dtw.segment_series(s, "audio")
    m = dtw.segment_matrix(samples[:4], "skeleton", step=4, threads=1)
    assert m.ids == [x.sample_id for x in samples[:4]] and m.labels == [x.target for x in samples[:4]]
