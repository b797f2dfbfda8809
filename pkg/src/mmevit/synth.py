"""Deterministic synthetic IMU + skeleton corpus with controllable class signal.

IMU channels are sums of sinusoids per label (absolute frequencies, so every
window sees the same motif regardless of segment length) plus a per-label
posture offset. Skeleton wrists follow smooth per-label splines through
anchor offsets; hands ride on the wrists. Coupled labels reuse their
partner's prototype with a small perturbation. Noise scale controls white
noise, baseline offsets, small time warps and keypoint jitter; Stroke
participants also move their affected side with reduced amplitude.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .data import (
    ActionLabel,
    IMUSegment,
    N_KEYPOINTS,
    PairedSample,
    ParticipantMeta,
    SkeletonSequence,
    write_imu_csv,
    write_participants,
    write_skeleton_json,
)
from .exceptions import ValidationError

GYRO_SCALE = 30.0
IMAGE_SIZE = (640, 480)


@dataclass
class LengthParams:
    mean: float
    std: float
    min: int
    max: int


@dataclass
class GenConfig:
    seed: int = 0
    nd: int = 8
    stroke: int = 4
    sessions: int = 8
    noise_nd: float = 0.3
    noise_stroke: float = 1.0
    couple: tuple = ((2, 3), (7, 8))
    length_nd: LengthParams = field(default_factory=lambda: LengthParams(414, 237, 151, 2386))
    length_stroke: LengthParams = field(default_factory=lambda: LengthParams(904, 649, 155, 4343))
    skeleton_step: int = 4
    affected_gain: float = 0.5
    coupling_strength: float = 0.45
    window: int = 120

    def __post_init__(self):
        self.couple = tuple(tuple(int(v) for v in p) for p in self.couple)
        if self.nd < 0 or self.stroke < 0 or self.nd + self.stroke == 0:
            raise ValidationError("need at least one participant")
        if self.sessions < 1:
            raise ValidationError("sessions must be >= 1")
        if min(self.noise_nd, self.noise_stroke) < 0:
            raise ValidationError("noise scales must be non-negative")
        for lp in (self.length_nd, self.length_stroke):
            if lp.std < 0 or lp.min < 1 or lp.max < lp.min:
                raise ValidationError(f"unsatisfiable length parameters {lp}")
            if lp.min < self.window:
                raise ValidationError(f"minimum length {lp.min} is below the window length {self.window}")
        seen = set()
        for a, b in self.couple:
            if a == b or {a, b} & seen or not {a, b} <= set(range(1, 10)):
                raise ValidationError(f"invalid coupling {(a, b)}")
            seen |= {a, b}
        if self.skeleton_step < 1:
            raise ValidationError("skeleton_step must be >= 1")


# -- prototypes ----------------------------------------------------------
@dataclass
class _Prototype:
    freqs: list  # per channel: array of angular frequencies
    amps: list
    phases: list
    offsets: np.ndarray  # [12]
    anchors: np.ndarray  # [4, 2 hands, 2 xy] wrist offsets at anchor times
    osc: np.ndarray  # [2 hands, 3] (amplitude px, cycles, phase)
    hand_angle: np.ndarray  # [2]


def _prototypes(cfg: GenConfig) -> dict:
    rng = np.random.default_rng([cfg.seed, 7919])
    protos = {}
    for label in ActionLabel:
        freqs, amps, phases = [], [], []
        for _ in range(12):
            k = int(rng.integers(2, 5))
            freqs.append(2 * np.pi * rng.uniform(1.0, 8.0, size=k) / cfg.window)
            amps.append(rng.uniform(0.4, 1.0, size=k))
            phases.append(rng.uniform(0, 2 * np.pi, size=k))
        protos[int(label)] = _Prototype(
            freqs, amps, phases,
            offsets=rng.normal(0.0, 0.6, size=12),
            anchors=rng.uniform(-110, 110, size=(4, 2, 2)) * np.array([1.0, 1.2]),
            osc=np.stack([rng.uniform(0, 25, 2), rng.uniform(1, 4, 2), rng.uniform(0, 2 * np.pi, 2)], axis=1),
            hand_angle=rng.uniform(-1.0, 1.0, size=2),
        )
    for a, b in cfg.couple:
        base = protos[a]
        s = cfg.coupling_strength
        extra_f = 2 * np.pi * rng.uniform(9.0, 12.0) / cfg.window
        protos[b] = _Prototype(
            freqs=[np.append(f, extra_f) for f in base.freqs],
            amps=[np.append(am, s) for am in base.amps],
            phases=[np.append(ph, rng.uniform(0, 2 * np.pi)) for ph in base.phases],
            offsets=base.offsets + rng.normal(0.0, 0.25 * s, size=12),
            anchors=base.anchors + rng.normal(0.0, 40.0 * s, size=base.anchors.shape),
            osc=base.osc.copy(),
            hand_angle=base.hand_angle + rng.choice([-1, 1], size=2) * 0.8 * s,
        )
    return protos


# -- skeleton template ----------------------------------------------------
_BODY = np.array([
    (0, -120), (12, -130), (-12, -130), (25, -125), (-25, -125),
    (60, -60), (-60, -60), (75, 20), (-75, 20), (60, 90), (-60, 90),
], dtype=float)


def _hand_template(side: int) -> np.ndarray:
    """21 offsets from the wrist; ``side`` = +1 for left (image right), -1 for right."""
    pts = [(0.0, 0.0)]
    for f in range(5):
        ang = np.pi / 2 + side * (f - 2) * 0.28
        for j in range(1, 5):
            r = 7.0 * j + (3.0 if f else 0.0)
            pts.append((side * 0.3 * r + r * np.cos(ang) * 0.6, r * np.sin(ang)))
    return np.array(pts)


_HANDS = (_hand_template(+1), _hand_template(-1))


def _rotate(pts, angle):
    c, s = np.cos(angle), np.sin(angle)
    return pts @ np.array([[c, s], [-s, c]])


# -- sample generation ---------------------------------------------------
def _length(rng, lp: LengthParams) -> int:
    return int(np.clip(round(rng.normal(lp.mean, lp.std)), lp.min, lp.max))


def _imu_samples(proto: _Prototype, T, noise, affected, gain, rng) -> np.ndarray:
    speed = 1.0 + rng.normal(0.0, 0.03)
    warp = np.cumsum(rng.normal(0.0, 0.02 * noise, size=T))
    t = np.arange(T) * speed + rng.uniform(0, 600) + warp
    out = np.empty((T, 12))
    for c in range(12):
        out[:, c] = (proto.amps[c][None, :] * np.sin(np.outer(t, proto.freqs[c]) + proto.phases[c])).sum(1)
    out *= rng.normal(1.0, 0.08)
    if affected is not None:
        out[:, affected] *= gain
    out += proto.offsets
    out += rng.normal(0.0, 0.5 * noise, size=12)
    out += rng.normal(0.0, noise, size=(T, 12))
    out[:, [3, 4, 5, 9, 10, 11]] *= GYRO_SCALE
    out[:, 2] += 1.0
    out[:, 8] += 1.0
    return out


def _skeleton_frames(proto: _Prototype, T, noise, affected_hand, gain, body, rng) -> np.ndarray:
    scale, dx, dy = body
    u = np.linspace(0.0, 1.0, T)
    knots = np.linspace(0.0, 1.0, 4)
    anchors = proto.anchors + rng.normal(0.0, 4.0 + 30.0 * noise, size=proto.anchors.shape)
    frames = np.empty((T, N_KEYPOINTS, 3))
    sway = rng.normal(0.0, 1.5, size=(T, 1, 2)).cumsum(axis=0) * 0.2
    pose = np.broadcast_to(_BODY, (T, 11, 2)).copy() + sway
    for hand, wrist_idx, elbow_idx, shoulder_idx in ((0, 9, 7, 5), (1, 10, 8, 6)):
        path = CubicSpline(knots, anchors[:, hand, :], bc_type="natural")(u)
        amp, cycles, ph = proto.osc[hand]
        path[:, 1] += amp * np.sin(2 * np.pi * cycles * u + ph)
        if affected_hand == hand:
            path *= gain
        pose[:, wrist_idx] = _BODY[wrist_idx] + path
        bend = np.array([(1 - 2 * hand) * 25.0, 10.0])
        pose[:, elbow_idx] = 0.5 * (pose[:, shoulder_idx] + pose[:, wrist_idx]) + bend
    frames[:, :11, :2] = pose
    for hand, start, wrist_idx in ((0, 11, 9), (1, 32, 10)):
        shape = _rotate(_HANDS[hand], proto.hand_angle[hand])
        frames[:, start:start + 21, :2] = pose[:, wrist_idx:wrist_idx + 1] + shape[None]
    frames[..., :2] += rng.normal(0.0, 3.0 * noise, size=(T, N_KEYPOINTS, 2))
    frames[..., :2] = frames[..., :2] * scale + np.array([IMAGE_SIZE[0] / 2 + dx, IMAGE_SIZE[1] / 2 + dy])
    conf = rng.uniform(0.7, 1.0, size=(T, N_KEYPOINTS))
    dropped = rng.random((T, N_KEYPOINTS)) < min(0.5, 0.02 * noise)
    conf[dropped] = rng.uniform(0.0, 0.3, size=int(dropped.sum()))
    frames[..., 2] = conf
    return np.round(frames, 4)


def _participants(cfg: GenConfig):
    rng = np.random.default_rng([cfg.seed, 104729])
    metas = []
    for i in range(cfg.nd):
        metas.append(ParticipantMeta(f"ND{i + 1:02d}", "ND", "R", age=int(rng.integers(20, 32)),
                                     gender=str(rng.choice(["F", "M"]))))
    for i in range(cfg.stroke):
        metas.append(ParticipantMeta(
            f"Stroke{i + 1:02d}", "Stroke", "R", affected_side=str(rng.choice(["L", "R"])),
            age=int(rng.integers(27, 88)), onset=int(rng.integers(1, 56)),
            gender=str(rng.choice(["F", "M"])), mas="G1/G0",
        ))
    return metas


def generate_samples(cfg: GenConfig):
    """Build the corpus in memory; returns (samples, participant metadata)."""
    protos = _prototypes(cfg)
    metas = _participants(cfg)
    samples = []
    for p_idx, meta in enumerate(metas):
        stroke = meta.group == "Stroke"
        noise = cfg.noise_stroke if stroke else cfg.noise_nd
        lengths = cfg.length_stroke if stroke else cfg.length_nd
        body_rng = np.random.default_rng([cfg.seed, 15485863, p_idx])
        body = (body_rng.uniform(0.8, 1.2), body_rng.normal(0, 20), body_rng.normal(0, 15))
        affected_hand = None
        affected_cols = None
        if stroke:
            affected_hand = 0 if meta.affected_side == "L" else 1
            affected_cols = slice(0, 6) if affected_hand == 0 else slice(6, 12)
        for session in range(1, cfg.sessions + 1):
            for label in ActionLabel:
                rng = np.random.default_rng([cfg.seed, p_idx, session, int(label)])
                T = _length(rng, lengths)
                stem = f"{meta.id}_s{session:02d}_{int(label)}_01"
                imu = _imu_samples(protos[int(label)], T, noise, affected_cols, cfg.affected_gain, rng)
                t_skel = -(-T // cfg.skeleton_step)
                skel = _skeleton_frames(protos[int(label)], t_skel, noise, affected_hand, cfg.affected_gain, body, rng)
                samples.append(PairedSample(
                    IMUSegment(meta.id, label, imu, stem),
                    SkeletonSequence(meta.id, label, skel, stem),
                    meta.group,
                ))
    return samples, metas


def generate(cfg: GenConfig, out_dir):
    """Write the corpus to ``out_dir`` in the standard on-disk layout."""
    out = Path(out_dir)
    (out / "imu").mkdir(parents=True, exist_ok=True)
    (out / "skeleton").mkdir(parents=True, exist_ok=True)
    samples, metas = generate_samples(cfg)
    write_participants(out / "participants.csv", metas)
    for s in samples:
        write_imu_csv(out / "imu" / f"{s.sample_id}.csv", s.imu)
        write_skeleton_json(out / "skeleton" / f"{s.sample_id}.json", s.skeleton)
    return samples


STAT_COLUMNS = ("mean", "std", "min", "med", "max")


def describe(corpus) -> list:
    """Length statistics per (modality, group): rows of dicts with mean/std/min/med/max."""
    samples = list(corpus)
    if not samples:
        raise ValidationError("cannot describe an empty corpus")
    lengths = defaultdict(list)
    for s in samples:
        lengths[("IMU", s.group)].append(s.imu.T)
        lengths[("Skeleton", s.group)].append(s.skeleton.T)
    rows = []
    for (modality, group) in sorted(lengths):
        v = np.array(sorted(lengths[(modality, group)]), dtype=float)
        rows.append({
            "modality": modality, "group": group, "count": int(v.size),
            "mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()),
            "med": float(np.median(v)), "max": float(v.max()),
        })
    return rows
