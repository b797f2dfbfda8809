"""Per-segment preprocessing shared by training, evaluation and the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import imu, skeleton
from .data import PairedSample, SkeletonSequence
from .exceptions import ValidationError


@dataclass
class PipelineConfig:
    window: int = 120
    stride: int = 60
    norm_scope: str = "segment"
    eps: float = 1e-8
    pad: bool = False
    grid: int = 56
    sigma: float = 0.6
    frames: int = 48
    policy: str = "uniform"
    sigma_squared: bool = False
    flip_prob: float = 0.5
    crop: float = 0.9

    def __post_init__(self):
        if self.norm_scope not in ("segment", "corpus"):
            raise ValidationError(f"norm scope must be 'segment' or 'corpus', got {self.norm_scope!r}")
        if self.window < 1 or self.stride < 1 or self.grid < 2 or self.frames < 1:
            raise ValidationError("window, stride, frames must be >= 1 and grid >= 2")
        if self.policy not in skeleton.FRAME_POLICIES:
            raise ValidationError(f"frame policy must be one of {skeleton.FRAME_POLICIES}")

    @property
    def augmentation(self) -> skeleton.AugmentationSpec:
        return skeleton.AugmentationSpec(self.flip_prob, "horizontal", self.crop, self.policy)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class PreparedSegment:
    sample_id: str
    participant: str
    group: str
    target: int  # 0-based class index
    windows: np.ndarray  # [n, window, 4, 3]
    skeleton: SkeletonSequence  # grid-normalised coordinates, full length

    @property
    def n_windows(self):
        return self.windows.shape[0]


def prepare_segments(samples, cfg: PipelineConfig, classes=None, stats=None, dtype=np.float32):
    """IMU windows and grid-normalised skeletons for each sample.

    ``classes`` lists the target values in class-index order (defaults to
    the sorted distinct targets). ``stats`` supplies corpus statistics
    when ``cfg.norm_scope == "corpus"``.
    """
    samples = list(samples)
    if classes is None:
        classes = sorted({s.target for s in samples})
    index = {c: i for i, c in enumerate(classes)}
    if cfg.norm_scope == "corpus" and stats is None:
        stats = imu.corpus_stats([s.imu for s in samples])
    out = []
    for s in samples:
        if s.target not in index:
            raise ValidationError(f"{s.sample_id}: target {s.target} not among classes {list(classes)}")
        wins = imu.segment_windows(
            s.imu, cfg.window, cfg.stride, cfg.eps, cfg.pad, stats if cfg.norm_scope == "corpus" else None
        )
        skel = skeleton.normalize_coordinates(s.skeleton, (cfg.grid, cfg.grid))
        out.append(PreparedSegment(s.sample_id, s.participant, s.group, index[s.target],
                                   wins.astype(dtype), skel))
    return out


def render_volume(seg: PreparedSegment, cfg: PipelineConfig, rng=None, augment=False,
                  dtype=np.float32) -> np.ndarray:
    """Heatmap volume [53, frames, grid, grid]; deterministic unless ``augment``."""
    spec = cfg.augmentation if augment else None
    policy = cfg.policy if augment else ("uniform" if cfg.policy == "random-of-subsegment" else cfg.policy)
    vol = skeleton.skeleton_volume(
        seg.skeleton, (cfg.grid, cfg.grid), cfg.sigma, cfg.frames, policy, cfg.sigma_squared,
        spec=spec, rng=rng if rng is not None else np.random.default_rng(0), normalized=True,
    )
    return vol.astype(dtype, copy=False)


def render_volumes(segments, cfg, rngs=None, augment=False, dtype=np.float32) -> np.ndarray:
    if rngs is None:
        rngs = [None] * len(segments)
    return np.stack([render_volume(s, cfg, r, augment, dtype) for s, r in zip(segments, rngs)])
