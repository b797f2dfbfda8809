"""Segments, labels, participants, splits, and the on-disk formats.

A corpus directory looks like::

    root/participants.csv
    root/imu/<participant>_<session>_<label>_<seq>.csv
    root/skeleton/<participant>_<session>_<label>_<seq>.json

IMU and skeleton files are paired by their shared stem.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ParseError, ValidationError

IMU_COLUMNS = (
    "t",
    "lacc_x", "lacc_y", "lacc_z",
    "lgyr_x", "lgyr_y", "lgyr_z",
    "racc_x", "racc_y", "racc_z",
    "rgyr_x", "rgyr_y", "rgyr_z",
)
N_IMU_CHANNELS = 12
N_KEYPOINTS = 53
GROUPS = ("ND", "Stroke")
PARTICIPANT_COLUMNS = (
    "id", "group", "handedness", "affected_side", "gender", "age", "onset_months", "mas",
)
STEM_PATTERN = re.compile(
    r"^(?P<participant>[A-Za-z0-9-]+)_(?P<session>[A-Za-z0-9-]+)_(?P<label>\d+)_(?P<seq>[A-Za-z0-9-]+)$"
)


class ActionLabel(enum.IntEnum):
    LiftCupHandle = 1
    HairBrush = 2
    BrushTeeth = 3
    Remotecon = 4
    MovingCan = 5
    Writing = 6
    FoldingPaper = 7
    FoldUpTower = 8
    WashFace = 9

    @classmethod
    def parse(cls, value) -> "ActionLabel":
        if isinstance(value, cls):
            return value
        if isinstance(value, str) and not value.strip().lstrip("-").isdigit():
            try:
                return cls[value.strip()]
            except KeyError:
                raise ValidationError(f"unknown action label {value!r}") from None
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValidationError(f"action label index must be 1..9, got {value!r}") from None


@dataclass(frozen=True)
class ParticipantMeta:
    id: str
    group: str
    handedness: str
    affected_side: Optional[str] = None
    age: Optional[int] = None
    onset: Optional[int] = None
    gender: Optional[str] = None
    mas: Optional[str] = None

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValidationError(f"{self.id}: group must be one of {GROUPS}")
        if self.handedness not in ("L", "R"):
            raise ValidationError(f"{self.id}: handedness must be L or R")
        stroke = self.group == "Stroke"
        if stroke != (self.affected_side is not None) or stroke != (self.onset is not None):
            raise ValidationError(
                f"{self.id}: affected_side and onset are required for Stroke and forbidden for ND"
            )
        if self.affected_side is not None and self.affected_side not in ("L", "R"):
            raise ValidationError(f"{self.id}: affected_side must be L or R")


def group_of(participant: str) -> str:
    """Fallback group inference from the participant id prefix."""
    return "Stroke" if participant.lower().startswith("stroke") else "ND"


@dataclass(frozen=True, eq=False)
class IMUSegment:
    participant: str
    label: ActionLabel
    samples: np.ndarray
    segment_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != N_IMU_CHANNELS:
            raise ValidationError(f"IMU samples must be [T, 12], got {s.shape}")
        if s.shape[0] < 1:
            raise ValidationError("IMU segment is empty")
        if not np.isfinite(s).all():
            raise ValidationError("IMU samples contain non-finite values")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "label", ActionLabel.parse(self.label))

    @property
    def T(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    participant: str
    label: ActionLabel
    frames: np.ndarray
    segment_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[1:] != (N_KEYPOINTS, 3):
            raise ValidationError(f"skeleton frames must be [T, 53, 3], got {f.shape}")
        if f.shape[0] < 1:
            raise ValidationError("skeleton sequence is empty")
        if not np.isfinite(f).all():
            raise ValidationError("skeleton values contain non-finite entries")
        conf = f[..., 2]
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValidationError("keypoint confidences must lie in [0, 1]")
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "label", ActionLabel.parse(self.label))

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class PairedSample:
    imu: IMUSegment
    skeleton: SkeletonSequence
    group: str = ""
    target: int = None

    def __post_init__(self):
        if self.imu.participant != self.skeleton.participant:
            raise ValidationError("IMU and skeleton participants differ")
        if self.imu.label != self.skeleton.label:
            raise ValidationError("IMU and skeleton labels differ")
        if not self.group:
            object.__setattr__(self, "group", group_of(self.imu.participant))
        if self.group not in GROUPS:
            raise ValidationError(f"unknown group {self.group!r}")
        if self.target is None:
            object.__setattr__(self, "target", int(self.imu.label))

    @property
    def participant(self) -> str:
        return self.imu.participant

    @property
    def label(self) -> ActionLabel:
        return self.imu.label

    @property
    def sample_id(self) -> str:
        return self.imu.segment_id or self.skeleton.segment_id


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list

    def sizes(self):
        return len(self.train), len(self.valid), len(self.test)


# -- parsers -------------------------------------------------------------
def parse_stem(stem: str) -> dict:
    m = STEM_PATTERN.match(stem)
    if m is None:
        raise ValidationError(
            f"file stem {stem!r} does not match <participant>_<session>_<label>_<seq>"
        )
    return m.groupdict()


def parse_imu_csv(path, participant=None, label=None) -> IMUSegment:
    """Read one IMU segment; participant and label default to the file stem."""
    path = Path(path)
    if participant is None or label is None:
        info = parse_stem(path.stem)
        participant = participant or info["participant"]
        label = label or info["label"]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if len(row) != len(IMU_COLUMNS):
                raise ParseError(path, lineno, f"expected {len(IMU_COLUMNS)} columns, got {len(row)}")
            if lineno == 1:
                if tuple(c.strip() for c in row) != IMU_COLUMNS:
                    raise ParseError(path, 1, "header does not match the IMU schema")
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise ParseError(path, lineno, "non-numeric cell") from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(path, lineno, "non-finite cell")
            rows.append(values[1:])
    if not rows:
        raise ParseError(path, 1, "no data rows")
    return IMUSegment(participant, ActionLabel.parse(label), np.array(rows), path.stem)


def write_imu_csv(path, seg: IMUSegment, rate_hz: float = 30.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_COLUMNS)
        for t, row in enumerate(seg.samples):
            w.writerow([f"{t / rate_hz:.6f}"] + [repr(float(v)) for v in row])


def parse_skeleton_json(path) -> SkeletonSequence:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    for key in ("participant", "label", "frames"):
        if key not in doc:
            raise ParseError(path, None, f"missing key {key!r}")
    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise ParseError(path, None, "frames must be a non-empty list")
    for t, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != N_KEYPOINTS:
            n = len(frame) if isinstance(frame, list) else "non-list"
            raise ParseError(path, None, f"frame {t}: expected {N_KEYPOINTS} keypoints, got {n}")
        for k, kp in enumerate(frame):
            if not isinstance(kp, list) or len(kp) != 3:
                raise ParseError(path, None, f"frame {t} keypoint {k}: expected [x, y, confidence]")
            if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in kp):
                raise ParseError(path, None, f"frame {t} keypoint {k}: non-numeric value")
            if not 0.0 <= kp[2] <= 1.0:
                raise ParseError(path, None, f"frame {t} keypoint {k}: confidence {kp[2]} outside [0, 1]")
    return SkeletonSequence(
        str(doc["participant"]), ActionLabel.parse(doc["label"]), np.array(frames, dtype=np.float64), path.stem
    )


def write_skeleton_json(path, seq: SkeletonSequence) -> None:
    doc = {
        "participant": seq.participant,
        "label": int(seq.label),
        "frames": np.round(seq.frames, 4).tolist(),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def read_participants(path) -> dict:
    path = Path(path)
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PARTICIPANT_COLUMNS:
            raise ParseError(path, 1, f"participant header must be {','.join(PARTICIPANT_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                meta = ParticipantMeta(
                    id=row["id"],
                    group=row["group"],
                    handedness=row["handedness"],
                    affected_side=row["affected_side"] or None,
                    age=int(row["age"]) if row["age"] else None,
                    onset=int(row["onset_months"]) if row["onset_months"] else None,
                    gender=row["gender"] or None,
                    mas=row["mas"] or None,
                )
            except (ValueError, ValidationError) as exc:
                raise ParseError(path, lineno, str(exc)) from None
            out[meta.id] = meta
    return out


def write_participants(path, metas) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTICIPANT_COLUMNS)
        for m in metas:
            w.writerow([
                m.id, m.group, m.handedness, m.affected_side or "", m.gender or "",
                "" if m.age is None else m.age, "" if m.onset is None else m.onset, m.mas or "",
            ])


def load_corpus(root) -> list:
    """Pair every IMU CSV with its skeleton JSON under ``root``."""
    root = Path(root)
    imu_files = {p.stem: p for p in sorted((root / "imu").glob("*.csv"))}
    skel_files = {p.stem: p for p in sorted((root / "skeleton").glob("*.json"))}
    if not imu_files and not skel_files:
        raise ValidationError(f"{root}: no segments found")
    unpaired = sorted(set(imu_files) ^ set(skel_files))
    if unpaired:
        raise ValidationError(f"{root}: unpaired segments: {', '.join(unpaired[:5])}")
    meta_path = root / "participants.csv"
    metas = read_participants(meta_path) if meta_path.exists() else {}
    samples = []
    for stem in sorted(imu_files):
        imu = parse_imu_csv(imu_files[stem])
        skel = parse_skeleton_json(skel_files[stem])
        meta = metas.get(imu.participant)
        samples.append(PairedSample(imu, skel, meta.group if meta else group_of(imu.participant)))
    return samples


# -- splitting -----------------------------------------------------------
def _allocate(n: int, ratios) -> list:
    """Largest-remainder allocation; every part gets one item when n allows."""
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    if n >= len(ratios):
        for i in range(len(counts)):
            if counts[i] == 0:
                donor = max(range(len(counts)), key=lambda j: counts[j])
                counts[donor] -= 1
                counts[i] += 1
    return counts


def split_dataset(samples, ratios=(7, 2, 1), seed=0, by="segment") -> DatasetSplit:
    """Stratified train/valid/test split.

    ``by="segment"`` stratifies individual segments on (group, label);
    ``by="participant"`` keeps every participant inside one split,
    stratified on group.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("cannot split an empty dataset")
    if len(samples) < 10:
        raise ValidationError(f"need at least 10 samples to split, got {len(samples)}")
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ValidationError(f"invalid ratios {ratios}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    if by == "segment":
        strata = defaultdict(list)
        for s in samples:
            strata[(s.group, int(s.label))].append(s)
        for key in sorted(strata):
            members = sorted(strata[key], key=lambda s: s.sample_id)
            perm = rng.permutation(len(members))
            counts = _allocate(len(members), ratios)
            start = 0
            for part, c in zip(parts, counts):
                part.extend(members[i] for i in perm[start:start + c])
                start += c
    elif by == "participant":
        by_group = defaultdict(set)
        for s in samples:
            by_group[s.group].add(s.participant)
        assignment = {}
        for group in sorted(by_group):
            people = sorted(by_group[group])
            perm = rng.permutation(len(people))
            counts = _allocate(len(people), ratios)
            start = 0
            for split_idx, c in enumerate(counts):
                for i in perm[start:start + c]:
                    assignment[people[i]] = split_idx
                start += c
        for s in sorted(samples, key=lambda s: s.sample_id):
            parts[assignment[s.participant]].append(s)
    else:
        raise ValidationError(f"split mode must be 'segment' or 'participant', got {by!r}")
    return DatasetSplit(*(sorted(p, key=lambda s: s.sample_id) for p in parts))


# -- label merging -------------------------------------------------------
@dataclass(frozen=True)
class LabelMap:
    """Original action index (1..9) -> class index (1..C) with class names."""

    mapping: dict
    names: tuple
    merge_pairs: tuple = field(default=())

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def to_class(self, label) -> int:
        return self.mapping[int(label)]

    def rows(self):
        return [(orig, ActionLabel(orig).name, cls, self.names[cls - 1]) for orig, cls in sorted(self.mapping.items())]


def build_label_map(merge_pairs=()) -> LabelMap:
    pairs = [tuple(int(v) for v in p) for p in merge_pairs]
    seen = set()
    for a, b in pairs:
        for v in (a, b):
            if v not in ActionLabel._value2member_map_:
                raise ValidationError(f"merge pair ({a}, {b}) references unknown label {v}")
        if a == b:
            raise ValidationError(f"merge pair ({a}, {b}) repeats a label")
        if a in seen or b in seen:
            raise ValidationError(f"merge pairs overlap at ({a}, {b})")
        seen.update((a, b))
    partner = {}
    for a, b in pairs:
        partner[a], partner[b] = b, a
    mapping, names = {}, []
    for label in ActionLabel:
        v = int(label)
        if v in mapping:
            continue
        names.append(label.name if v not in partner else "+".join(
            ActionLabel(x).name for x in sorted((v, partner[v]))))
        mapping[v] = len(names)
        if v in partner:
            mapping[partner[v]] = len(names)
    return LabelMap(mapping, tuple(names), tuple(pairs))


def merge_labels(samples, merge_pairs=((2, 3), (7, 8))):
    """Relabel samples into contiguous merged classes; returns (samples, label_map).

    Targets are always derived from each sample's original action label, so
    applying the same merge twice is a no-op.
    """
    label_map = build_label_map(merge_pairs)
    out = [replace(s, target=label_map.to_class(s.label)) for s in samples]
    return out, label_map
