import json
import zlib

import numpy as np
import pytest

from mmevit import data
from mmevit.data import ActionLabel, IMUSegment, PairedSample, ParticipantMeta, SkeletonSequence
from mmevit.exceptions import ParseError, ValidationError


def make_sample(participant="nd01", label=1, seq="00", T=10, group=""):
    rng = np.random.default_rng(zlib.crc32(f"{participant}{label}{seq}".encode()))
    sid = f"{participant}_s1_{label}_{seq}"
    frames = np.concatenate([rng.uniform(0, 100, size=(T, 53, 2)), np.ones((T, 53, 1))], axis=-1)
    return PairedSample(IMUSegment(participant, label, rng.normal(size=(T, 12)), sid),
                        SkeletonSequence(participant, label, frames, sid), group)


def test_action_label_parsing():
    assert ActionLabel.parse("3") is ActionLabel.BrushTeeth
    assert ActionLabel.parse(9) is ActionLabel.WashFace
    assert ActionLabel.parse("FoldUpTower") is ActionLabel.FoldUpTower
    for bad in ("0", 10, "Jumping", None):
        with pytest.raises(ValidationError):
            ActionLabel.parse(bad)


def test_participant_meta_rules():
    ParticipantMeta("nd01", "ND", "R")
    ParticipantMeta("stroke01", "Stroke", "L", affected_side="R", onset=12)
    with pytest.raises(ValidationError):
        ParticipantMeta("x", "Stroke", "R")
    with pytest.raises(ValidationError):
        ParticipantMeta("x", "ND", "R", affected_side="L", onset=3)
    with pytest.raises(ValidationError):
        ParticipantMeta("x", "Other", "R")


def test_segment_validation():
    with pytest.raises(ValidationError):
        IMUSegment("p", 1, np.zeros((5, 11)))
    with pytest.raises(ValidationError):
        IMUSegment("p", 1, np.full((5, 12), np.nan))
    frames = np.zeros((2, 53, 3))
    frames[0, 0, 2] = 1.5
    with pytest.raises(ValidationError):
        SkeletonSequence("p", 1, frames)


def test_paired_sample_defaults_and_checks():
    s = make_sample("stroke02", label=4)
    assert s.group == "Stroke" and s.target == 4 and s.label is ActionLabel.Remotecon
    assert PairedSample(s.imu, s.skeleton, target=0).target == 0
    other = make_sample("nd01", label=4)
    with pytest.raises(ValidationError):
        PairedSample(s.imu, other.skeleton)


def test_parse_stem():
    assert data.parse_stem("nd03_s2_7_01") == {"participant": "nd03", "session": "s2", "label": "7", "seq": "01"}
    with pytest.raises(ValidationError):
        data.parse_stem("nd03-s2-7")


def test_imu_csv_round_trip(tmp_path):
    s = make_sample()
    path = tmp_path / f"{s.sample_id}.csv"
    data.write_imu_csv(path, s.imu)
    back = data.parse_imu_csv(path)
    assert back.participant == "nd01" and back.label == 1 and back.segment_id == s.sample_id
    assert np.array_equal(back.samples, s.imu.samples)


@pytest.mark.parametrize("body, line, message", [
    ("t,a\n", 1, "columns"),
    (",".join(["x"] * 13) + "\n", 1, "header"),
    (",".join(data.IMU_COLUMNS) + "\n" + ",".join(["0"] * 12 + ["nope"]) + "\n", 2, "non-numeric"),
    (",".join(data.IMU_COLUMNS) + "\n" + ",".join(["0"] * 12 + ["inf"]) + "\n", 2, "non-finite"),
    (",".join(data.IMU_COLUMNS) + "\n", 1, "no data"),
])
def test_imu_csv_errors_carry_line(tmp_path, body, line, message):
    path = tmp_path / "nd01_s1_1_00.csv"
    path.write_text(body)
    with pytest.raises(ParseError, match=message) as info:
        data.parse_imu_csv(path)
    assert info.value.line == line


def test_skeleton_json_round_trip_and_errors(tmp_path):
    s = make_sample()
    path = tmp_path / f"{s.sample_id}.json"
    data.write_skeleton_json(path, s.skeleton)
    back = data.parse_skeleton_json(path)
    assert np.allclose(back.frames, s.skeleton.frames, atol=5e-5)
    doc = json.loads(path.read_text())
    doc["frames"][0] = doc["frames"][0][:52]
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match="53 keypoints"):
        data.parse_skeleton_json(path)
    path.write_text("{broken")
    with pytest.raises(ParseError, match="invalid JSON"):
        data.parse_skeleton_json(path)


def test_participants_round_trip(tmp_path):
    metas = [ParticipantMeta("nd01", "ND", "R", age=30, gender="F"),
             ParticipantMeta("stroke01", "Stroke", "R", affected_side="L", onset=6, mas="1+")]
    path = tmp_path / "participants.csv"
    data.write_participants(path, metas)
    back = data.read_participants(path)
    assert [back[m.id] for m in metas] == metas


def test_load_corpus_pairs_files(tmp_path):
    samples = [make_sample(label=k) for k in (1, 2)]
    (tmp_path / "imu").mkdir()
    (tmp_path / "skeleton").mkdir()
    for s in samples:
        data.write_imu_csv(tmp_path / "imu" / f"{s.sample_id}.csv", s.imu)
        data.write_skeleton_json(tmp_path / "skeleton" / f"{s.sample_id}.json", s.skeleton)
    assert [s.sample_id for s in data.load_corpus(tmp_path)] == [s.sample_id for s in samples]
    (tmp_path / "imu" / f"{samples[0].sample_id}.csv").unlink()
    with pytest.raises(ValidationError, match="unpaired"):
        data.load_corpus(tmp_path)
    with pytest.raises(ValidationError, match="no segments"):
        data.load_corpus(tmp_path / "missing")


def corpus():
    return [make_sample(p, label=k, seq=str(r)) for p in ("nd01", "nd02", "stroke01", "stroke02")
            for k in (1, 5) for r in range(10)]


def test_segment_split_is_stratified_and_disjoint():
    samples = corpus()
    split = data.split_dataset(samples, seed=3)
    assert split.sizes() == (56, 16, 8)
    ids = [s.sample_id for part in (split.train, split.valid, split.test) for s in part]
    assert sorted(ids) == sorted(s.sample_id for s in samples)
    # each (group, label) stratum of 20 splits 14/4/2
    for part, n in zip((split.train, split.valid, split.test), (14, 4, 2)):
        for key in (("ND", 1), ("Stroke", 5)):
            assert sum((s.group, int(s.label)) == key for s in part) == n


def test_split_deterministic_and_seed_sensitive():
    samples = corpus()
    ids = lambda sp: [s.sample_id for s in sp.test]
    assert ids(data.split_dataset(samples, seed=1)) == ids(data.split_dataset(samples[::-1], seed=1))
    assert ids(data.split_dataset(samples, seed=1)) != ids(data.split_dataset(samples, seed=2))


def test_participant_split_keeps_people_together():
    samples = [make_sample(f"{g}{i:02d}", label=1, seq=str(r)) for g in ("nd", "stroke") for i in range(5)
               for r in range(2)]
    split = data.split_dataset(samples, by="participant")
    people = [{s.participant for s in part} for part in (split.train, split.valid, split.test)]
    assert not (people[0] & people[1] or people[0] & people[2] or people[1] & people[2])
    assert all(people)


def test_split_rejects_bad_input():
    with pytest.raises(ValidationError):
        data.split_dataset(corpus()[:9])
    with pytest.raises(ValidationError):
        data.split_dataset(corpus(), ratios=(1, 1))
    with pytest.raises(ValidationError):
        data.split_dataset(corpus(), by="label")


def test_label_map_merges():
    lm = data.build_label_map([(2, 3), (7, 8)])
    assert lm.n_classes == 7
    assert [lm.to_class(k) for k in range(1, 10)] == [1, 2, 2, 3, 4, 5, 6, 6, 7]
    assert lm.names[1] == "HairBrush+BrushTeeth"
    assert data.build_label_map().n_classes == 9
    for bad in ([(2, 2)], [(2, 3), (3, 4)], [(0, 1)]):
        with pytest.raises(ValidationError):
            data.build_label_map(bad)


def test_merge_labels_idempotent():
    samples = [make_sample(label=k) for k in range(1, 10)]
    once, lm = data.merge_labels(samples)
    twice, _ = data.merge_labels(once)
    assert [s.target for s in once] == [s.target for s in twice] == [lm.to_class(k) for k in range(1, 10)]
    assert [s.label for s in once] == [s.label for s in samples]
