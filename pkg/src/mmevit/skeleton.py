"""Keypoint sequences -> Gaussian heatmap volumes, with frame sampling and augmentation.

Keypoint layout (53 points): indices 0-10 are the upper-body points nose,
left/right eye, left/right ear, left/right shoulder, left/right elbow,
left/right wrist; 11-31 are the 21 left-hand points and 32-52 the 21
right-hand points (wrist, then four joints per finger from thumb to
little finger).

Grid convention: a heatmap is indexed ``[k, row, col]`` with ``col``
following the keypoint's x coordinate and ``row`` its y coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import N_KEYPOINTS, SkeletonSequence
from .exceptions import ValidationError

BODY_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
)
_FINGERS = ("thumb", "index", "middle", "ring", "little")
HAND_NAMES = ("wrist",) + tuple(f"{f}{j}" for f in _FINGERS for j in range(1, 5))
KEYPOINT_NAMES = (
    BODY_NAMES
    + tuple(f"left_hand_{n}" for n in HAND_NAMES)
    + tuple(f"right_hand_{n}" for n in HAND_NAMES)
)
LEFT_HAND = range(11, 32)
RIGHT_HAND = range(32, 53)


def _symmetry_table() -> np.ndarray:
    perm = np.arange(N_KEYPOINTS)
    for a, b in ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10)):
        perm[a], perm[b] = b, a
    for a, b in zip(LEFT_HAND, RIGHT_HAND):
        perm[a], perm[b] = b, a
    return perm


FLIP_PERMUTATION = _symmetry_table()


@dataclass(frozen=True, eq=False)
class HeatmapVolume:
    values: np.ndarray  # [K, T, H, W]
    sigma: float
    grid: tuple

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class AugmentationSpec:
    flip_prob: float = 0.5
    flip_axis: str = "horizontal"
    crop_fraction: float = 0.9
    frame_policy: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValidationError("flip probability must lie in [0, 1]")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValidationError("crop fraction must lie in (0, 1]")
        if self.flip_axis != "horizontal":
            raise ValidationError("only horizontal flips are supported")
        if self.frame_policy not in FRAME_POLICIES:
            raise ValidationError(f"frame policy must be one of {FRAME_POLICIES}")


FRAME_POLICIES = ("uniform", "first-of-subsegment", "random-of-subsegment")


def normalize_coordinates(seq: SkeletonSequence, grid=(56, 56), pad_fraction=0.1) -> SkeletonSequence:
    """Map pixel coordinates into ``[0, grid-1]`` via the padded bounding box.

    The box covers every keypoint with positive confidence across the whole
    sequence, is padded by ``pad_fraction`` of its size on each side, and is
    scaled uniformly (aspect preserved) and centred in the grid.
    """
    h, w = grid
    f = seq.frames.copy()
    confident = f[..., 2] > 0
    if confident.any():
        xs, ys = f[..., 0][confident], f[..., 1][confident]
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    else:
        x0 = x1 = y0 = y1 = 0.0
    bw = max(x1 - x0, 1e-6) * (1 + 2 * pad_fraction)
    bh = max(y1 - y0, 1e-6) * (1 + 2 * pad_fraction)
    scale = min((w - 1) / bw, (h - 1) / bh)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    f[..., 0] = (f[..., 0] - cx) * scale + (w - 1) / 2
    f[..., 1] = (f[..., 1] - cy) * scale + (h - 1) / 2
    return replace(seq, frames=f)


def keypoint_heatmap(frame: np.ndarray, sigma: float, H: int, W: int,
                     sigma_squared: bool = False) -> np.ndarray:
    """Gaussian maps ``exp(-((col-x)^2 + (row-y)^2) / (2*sigma)) * c`` -> [K, H, W].

    With ``sigma_squared`` the denominator becomes ``2*sigma**2``.
    """
    return _heatmaps(np.asarray(frame, dtype=np.float64)[None], sigma, H, W, sigma_squared)[:, 0]


def _heatmaps(frames: np.ndarray, sigma, H, W, sigma_squared=False) -> np.ndarray:
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    denom = 2.0 * (sigma * sigma if sigma_squared else sigma)
    x = frames[..., 0].T[..., None]  # [K, T, 1]
    y = frames[..., 1].T[..., None]
    c = frames[..., 2].T
    gx = np.exp(-((np.arange(W) - x) ** 2) / denom)  # [K, T, W]
    gy = np.exp(-((np.arange(H) - y) ** 2) / denom)  # [K, T, H]
    return gy[..., :, None] * gx[..., None, :] * c[..., None, None]


def stack_volume(seq: SkeletonSequence, sigma=0.6, H=56, W=56, sigma_squared=False) -> HeatmapVolume:
    """Per-frame heatmaps stacked along time -> [K, T, H, W]."""
    return HeatmapVolume(_heatmaps(seq.frames, sigma, H, W, sigma_squared), sigma, (H, W))


def frame_indices(T: int, T_out: int, policy="uniform", rng=None) -> np.ndarray:
    if T_out < 1:
        raise ValidationError(f"T_out must be >= 1, got {T_out}")
    if T < 1:
        raise ValidationError("cannot sample frames from an empty sequence")
    if policy == "uniform":
        if T_out == 1:
            return np.zeros(1, dtype=np.int64)
        return np.floor(np.arange(T_out) * (T - 1) / (T_out - 1) + 0.5).astype(np.int64)
    b = np.arange(T_out)
    start = np.minimum(b * T // T_out, T - 1)
    stop = np.maximum((b + 1) * T // T_out, start + 1)
    if policy == "first-of-subsegment":
        return start.astype(np.int64)
    if policy == "random-of-subsegment":
        rng = rng if rng is not None else np.random.default_rng(0)
        return (start + np.floor(rng.random(T_out) * (stop - start))).astype(np.int64)
    raise ValidationError(f"unknown frame policy {policy!r}")


def sample_frames(seq: SkeletonSequence, T_out=48, policy="uniform", seed=0) -> SkeletonSequence:
    idx = frame_indices(seq.T, T_out, policy, np.random.default_rng(seed))
    return replace(seq, frames=seq.frames[idx])


def flip_horizontal(seq: SkeletonSequence, width=56) -> SkeletonSequence:
    """Mirror x about the grid centre and swap left/right keypoints."""
    f = seq.frames[:, FLIP_PERMUTATION].copy()
    f[..., 0] = (width - 1) - f[..., 0]
    return replace(seq, frames=f)


def crop(seq: SkeletonSequence, region, grid=(56, 56)) -> SkeletonSequence:
    """Rescale ``region=(x0, y0, x1, y1)`` onto the full grid.

    Keypoints outside the region keep their mapped coordinates but get
    confidence 0.
    """
    h, w = grid
    x0, y0, x1, y1 = (float(v) for v in region)
    if not (x1 > x0 and y1 > y0):
        raise ValidationError(f"empty crop region {region}")
    if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
        raise ValidationError(f"crop region {region} exceeds grid {grid}")
    f = seq.frames.copy()
    x, y = f[..., 0], f[..., 1]
    outside = (x < x0) | (x > x1) | (y < y0) | (y > y1)
    f[..., 0] = (x - x0) * (w - 1) / (x1 - x0)
    f[..., 1] = (y - y0) * (h - 1) / (y1 - y0)
    f[..., 2] = np.where(outside, 0.0, f[..., 2])
    return replace(seq, frames=f)


def augment(seq: SkeletonSequence, spec: AugmentationSpec, rng: np.random.Generator,
            grid=(56, 56)) -> SkeletonSequence:
    """One random flip/crop draw, applied identically to every frame."""
    h, w = grid
    if rng.random() < spec.flip_prob:
        seq = flip_horizontal(seq, w)
    if spec.crop_fraction < 1.0:
        cw, ch = spec.crop_fraction * (w - 1), spec.crop_fraction * (h - 1)
        x0 = rng.random() * (w - 1 - cw)
        y0 = rng.random() * (h - 1 - ch)
        seq = crop(seq, (x0, y0, x0 + cw, y0 + ch), grid)
    return seq


def skeleton_volume(seq: SkeletonSequence, grid=(56, 56), sigma=0.6, frames=48, policy="uniform",
                    sigma_squared=False, spec: AugmentationSpec = None, rng=None,
                    normalized=False) -> np.ndarray:
    """Normalise, sample, optionally augment, and render one sequence -> [K, T_out, H, W]."""
    if not normalized:
        seq = normalize_coordinates(seq, grid)
    rng = rng if rng is not None else np.random.default_rng(0)
    seq = replace(seq, frames=seq.frames[frame_indices(seq.T, frames, policy, rng)])
    if spec is not None:
        seq = augment(seq, spec, rng, grid)
    return stack_volume(seq, sigma, grid[0], grid[1], sigma_squared).values
