"""IMU segment -> normalised 3-channel image windows."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import IMUSegment
from .exceptions import ValidationError

# column layout of the [T, 12] matrix: sensor-modality blocks of x, y, z
ACC_COLUMNS = np.r_[0:3, 6:9]
GYR_COLUMNS = np.r_[3:6, 9:12]
DOMAINS = ("LH-acc", "LH-gyr", "RH-acc", "RH-gyr")


@dataclass(frozen=True, eq=False)
class IMUWindowImage:
    pixels: np.ndarray  # [W_len, 4, 3]
    segment_id: str
    start: int


@dataclass(frozen=True)
class ModalityStats:
    acc_mean: float
    acc_std: float
    gyr_mean: float
    gyr_std: float


def modality_stats(samples: np.ndarray) -> ModalityStats:
    acc = samples[:, ACC_COLUMNS]
    gyr = samples[:, GYR_COLUMNS]
    return ModalityStats(float(acc.mean()), float(acc.std()), float(gyr.mean()), float(gyr.std()))


def corpus_stats(segments) -> ModalityStats:
    """Pooled statistics over every time step of every segment."""
    stacked = np.concatenate([s.samples for s in segments], axis=0)
    return modality_stats(stacked)


def zscore_normalize(seg: IMUSegment, eps: float = 1e-8, stats: ModalityStats = None) -> IMUSegment:
    """Standardise accelerometer and gyroscope columns with one scalar pair each.

    The mean and std of a modality are pooled over both sensors, all three
    axes and every time step. ``stats`` substitutes precomputed (e.g.
    corpus-wide) statistics for the per-segment ones.
    """
    if seg.T < 2:
        raise ValidationError(f"segment {seg.segment_id!r} has T={seg.T}; need T >= 2 to normalise")
    if stats is None:
        stats = modality_stats(seg.samples)
    out = seg.samples.copy()
    out[:, ACC_COLUMNS] = (out[:, ACC_COLUMNS] - stats.acc_mean) / (stats.acc_std + eps)
    out[:, GYR_COLUMNS] = (out[:, GYR_COLUMNS] - stats.gyr_mean) / (stats.gyr_std + eps)
    return replace(seg, samples=out)


def to_image(seg) -> np.ndarray:
    """[T, 12] -> [T, 4, 3]: columns are sensor-modality domains, channels are axes."""
    samples = seg.samples if isinstance(seg, IMUSegment) else np.asarray(seg)
    return samples.reshape(samples.shape[0], 4, 3).copy()


def from_image(img: np.ndarray) -> np.ndarray:
    return np.asarray(img).reshape(img.shape[0], 12).copy()


def window_count(T: int, window: int, stride: int) -> int:
    if window < 1 or stride < 1:
        raise ValidationError("window and stride must be >= 1")
    if T < window:
        return 0
    return 1 + (T - window) // stride


def reflect_pad(img: np.ndarray, length: int) -> np.ndarray:
    """Mirror the tail of ``img`` along time until it reaches ``length`` rows."""
    out = img
    while out.shape[0] < length:
        need = length - out.shape[0]
        if out.shape[0] == 1:
            out = np.concatenate([out, np.repeat(out, need, axis=0)])
        else:
            k = min(need, out.shape[0] - 1)
            out = np.concatenate([out, out[-2:-2 - k:-1]])
    return out


def sliding_window(img: np.ndarray, window: int = 120, stride: int = 60, pad: bool = False,
                   segment_id: str = "") -> list:
    T = img.shape[0]
    if T < window:
        if not pad:
            raise ValidationError(f"segment {segment_id!r} has T={T} < window {window}")
        img = reflect_pad(img, window)
        T = window
    n = window_count(T, window, stride)
    return [IMUWindowImage(img[i * stride:i * stride + window].copy(), segment_id, i * stride)
            for i in range(n)]


def segment_windows(seg: IMUSegment, window=120, stride=60, eps=1e-8, pad=False,
                    stats: ModalityStats = None) -> np.ndarray:
    """Full pipeline for one segment; returns stacked windows [n, window, 4, 3]."""
    norm = zscore_normalize(seg, eps=eps, stats=stats)
    wins = sliding_window(to_image(norm), window, stride, pad=pad, segment_id=seg.segment_id)
    return np.stack([w.pixels for w in wins])
