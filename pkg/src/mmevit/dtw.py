"""Multivariate dynamic time warping and label-similarity analysis."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from . import imu, skeleton
from .data import PairedSample
from .exceptions import ShapeError, ValidationError

MODES = ("matched", "cross")


@numba.njit(cache=True, nogil=True)
def _dtw_kernel(a, b, band):
    n, m = a.shape[0], b.shape[0]
    # rolling rows of the DP table; column 0 is the infinite border
    prev = np.full(m + 1, np.inf)
    cur = np.full(m + 1, np.inf)
    prev[0] = 0.0
    width = max(band, abs(n - m)) if band >= 0 else max(n, m)
    for p in range(1, n + 1):
        cur[:] = np.inf
        lo = max(1, p - width)
        hi = min(m, p + width)
        for q in range(lo, hi + 1):
            d = a[p - 1] - b[q - 1]
            best = prev[q]
            if cur[q - 1] < best:
                best = cur[q - 1]
            if prev[q - 1] < best:
                best = prev[q - 1]
            cur[q] = best + d * d
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True, nogil=True)
def _multivariate_kernel(A, B, cross, band):
    # A, B are [C, T] with contiguous channel rows
    c = A.shape[0]
    total = 0.0
    for i in range(c):
        if cross:
            for j in range(c):
                total += _dtw_kernel(A[i], B[j], band)
        else:
            total += _dtw_kernel(A[i], B[i], band)
    return total / c


def _series(x, name):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise ValidationError(f"{name} is empty")
    return x


def _band(band):
    if band is None:
        return -1
    band = int(band)
    if band < 0:
        raise ValidationError(f"band must be non-negative, got {band}")
    return band


def dtw_1d(a, b, band=None) -> float:
    """DTW cost with squared differences and the three-way recurrence.

    ``band`` optionally limits ``|p - q|`` (widened to the length
    difference so the end cell stays reachable).
    """
    return float(_dtw_kernel(_series(a, "a"), _series(b, "b"), _band(band)))


def _channels_first(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be [T, C], got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValidationError(f"{name} has no time steps")
    return np.ascontiguousarray(x.T)


def multivariate_dtw(A, B, mode="matched", band=None) -> float:
    """DTW between two ``[T, C]`` series.

    ``matched`` averages the per-channel costs. ``cross`` sums the costs
    of all C*C channel pairs and divides by C.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    a, b = _channels_first(A, "A"), _channels_first(B, "B")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"channel counts differ: {a.shape[0]} vs {b.shape[0]}")
    return float(_multivariate_kernel(a, b, mode == "cross", _band(band)))


def thread_count(requested=None) -> int:
    """Worker count from the argument or ``MMEVIT_THREADS`` (0 = all cores)."""
    if requested is None:
        raw = os.environ.get("MMEVIT_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ValidationError(f"MMEVIT_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ValidationError("thread count must be >= 0")
    return requested or (os.cpu_count() or 1)


# -- segment preparation -------------------------------------------------
def segment_series(sample: PairedSample, modality: str, step: int = 1, eps: float = 1e-8) -> np.ndarray:
    """Normalised ``[T, C]`` series of one segment.

    IMU gives the 12 z-scored channels. Skeleton gives 106 channels
    (x and y of every keypoint) after bounding-box normalisation to the
    unit square. ``step`` keeps every step-th time point.
    """
    if step < 1:
        raise ValidationError("step must be >= 1")
    if modality == "imu":
        x = imu.zscore_normalize(sample.imu, eps=eps).samples
    elif modality == "skeleton":
        norm = skeleton.normalize_coordinates(sample.skeleton, (2, 2))
        x = norm.frames[..., :2].reshape(norm.frames.shape[0], -1)
    else:
        raise ValidationError(f"modality must be 'imu' or 'skeleton', got {modality!r}")
    x = np.asarray(x, dtype=np.float64)[::step]
    if x.shape[0] < 1:
        raise ValidationError(f"{sample.sample_id}: segment too short")
    return x


@dataclass
class DtwMatrix:
    values: np.ndarray  # [N, N]
    ids: list
    labels: list
    mode: str

    def __post_init__(self):
        n = len(self.ids)
        if self.values.shape != (n, n) or len(self.labels) != n:
            raise ShapeError("matrix, ids and labels disagree in size")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *self.ids])
            for i, row in zip(self.ids, self.values):
                w.writerow([i, *(repr(float(v)) for v in row)])


def pairwise_matrix(series, ids=None, labels=None, mode="matched", band=None, threads=None) -> DtwMatrix:
    """Symmetric DTW matrix over ``series`` (a list of ``[T, C]`` arrays).

    Each unordered pair is computed once. Work is spread over threads,
    and every cell is written by exactly one task, so the result does
    not depend on scheduling.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    n = len(series)
    if n < 2:
        raise ValidationError("pairwise_matrix needs at least two segments")
    data = [_channels_first(s, f"segment {i}") for i, s in enumerate(series)]
    if len({d.shape[0] for d in data}) != 1:
        raise ShapeError("segments have different channel counts")
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    labels = list(labels) if labels is not None else [None] * n
    cross, bw = mode == "cross", _band(band)
    out = np.zeros((n, n))

    def row(i):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = _multivariate_kernel(data[i], data[j], cross, bw)

    workers = min(thread_count(threads), n - 1)
    if workers == 1:
        for i in range(n - 1):
            row(i)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(row, range(n - 1)))
    return DtwMatrix(out, ids, labels, mode)


def segment_matrix(samples, modality="imu", mode="matched", step=1, band=None, threads=None) -> DtwMatrix:
    samples = list(samples)
    series = [segment_series(s, modality, step) for s in samples]
    return pairwise_matrix(series, [s.sample_id for s in samples], [int(s.target) for s in samples],
                           mode, band, threads)


# -- label analysis ------------------------------------------------------
@dataclass
class LabelSummary:
    labels: list
    means: np.ndarray  # [L, L]; diagonal = within-label mean

    def pairs(self):
        """Cross-label pairs ``(a, b, mean)`` with ``a < b``, most similar first."""
        rows = [(self.labels[i], self.labels[j], float(self.means[i, j]))
                for i in range(len(self.labels)) for j in range(i + 1, len(self.labels))]
        return sorted(rows, key=lambda r: (r[2], r[0], r[1]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label_a", "label_b", "mean_dtw"])
            for i, a in enumerate(self.labels):
                for j in range(i, len(self.labels)):
                    w.writerow([a, self.labels[j], repr(float(self.means[i, j]))])


def label_similarity_summary(matrix: DtwMatrix, labels=None) -> LabelSummary:
    """Mean DTW per label pair; within-label means skip the diagonal (NaN for one segment)."""
    labels_of = np.asarray(matrix.labels if labels is None else list(labels))
    if labels_of.shape[0] != matrix.values.shape[0]:
        raise ShapeError("one label per segment required")
    uniq = sorted(set(labels_of.tolist()))
    if not uniq:
        raise ValidationError("no labels")
    groups = [np.flatnonzero(labels_of == u) for u in uniq]
    means = np.full((len(uniq), len(uniq)), np.nan)
    for i, gi in enumerate(groups):
        for j in range(i, len(uniq)):
            block = matrix.values[np.ix_(gi, groups[j])]
            if i == j:
                k = len(gi)
                if k > 1:
                    means[i, i] = (block.sum() - np.trace(block)) / (k * (k - 1))
            else:
                means[i, j] = means[j, i] = block.mean()
    return LabelSummary(uniq, means)


def suggest_merges(summary: LabelSummary, threshold=0.3) -> list:
    """Non-overlapping label pairs whose mean DTW is at most ``threshold`` times
    the mean over all cross-label pairs, most similar first."""
    pairs = summary.pairs()
    if not pairs:
        return []
    global_mean = np.mean([p[2] for p in pairs])
    used, out = set(), []
    for a, b, v in pairs:
        if v <= threshold * global_mean and a not in used and b not in used:
            out.append((a, b))
            used |= {a, b}
    return out
