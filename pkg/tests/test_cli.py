import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mmevit import checkpoint, cli

TOY_TRAIN = ["--preset", "desk", "--dim", "8", "--heads", "2", "--imu-depth", "1", "--skel-depth", "1",
             "--grid", "8", "--frames", "4", "--window", "8", "--stride", "64", "--epochs", "1",
             "--lr", "0.01", "--batch", "16,8,16", "--no-augment", "--split-seed", "0"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--out", out, "--nd", 1, "--stroke", 1, "--sessions", 3, "--seed", 7) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", corpus, "--out", out, *TOY_TRAIN) == 0
    return out


def manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


def test_help_lists_subcommands_and_flags(capsys):
    assert run("--help") == 0
    text = capsys.readouterr().out
    for name in ("synth", "describe", "preprocess-imu", "preprocess-skel", "train", "eval", "f1", "dtw",
                 "merge-labels", "replay"):
        assert name in text
    assert run("train", "--help") == 0
    text = capsys.readouterr().out
    for flag in ("--phase", "--batch", "--lr", "--epochs", "--window", "--stride", "--norm-scope", "--grid",
                 "--sigma", "--frames", "--policy", "--merge-labels", "--split-seed", "--config", "--dtype"):
        assert flag in text
    for sub in ("eval", "f1", "dtw"):
        assert run(sub, "--help") == 0
        assert "--plot-data" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    assert run() == 2
    assert run("frobnicate") == 2
    assert run("dtw", "x", "--mode", "sum") == 2
    assert run("train", "x", "--batch", "a,b") == 2


def test_io_and_validation_exit_codes(tmp_path, capsys):
    assert run("f1", tmp_path / "missing.csv", "--out", tmp_path / "o") == 3
    assert run("synth", "--out", tmp_path / "s", "--config", tmp_path / "nope.json") == 3
    assert run("describe", tmp_path) == 4
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "validation"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sessionz": 1}))
    assert run("synth", "--out", tmp_path / "s", "--config", bad) == 4
    assert run("synth") == 4  # --out missing


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"nd": 3, "stroke": 2, "sessions": 5}))
    args = vars(cli.build_parser().parse_args(["synth", "--out", str(tmp_path), "--sessions", "2"]))
    cfg = cli.resolve("synth", args, cfg_file)
    assert (cfg["nd"], cfg["stroke"], cfg["sessions"], cfg["noise_nd"]) == (3, 2, 2, 0.3)


def test_synth_manifest(corpus):
    m = manifest(corpus)
    assert m["subcommand"] == "synth" and m["seed"] == 7
    assert {"config", "inputs", "outputs", "wall_time", "version"} <= set(m)
    assert "participants.csv" in m["outputs"] and len(m["outputs"]) == 1 + 2 * 54


def test_describe(corpus, tmp_path, capsys):
    assert run("describe", corpus) == 0
    captured = capsys.readouterr()
    assert "Skeleton" in captured.out and "Stroke" in captured.out
    assert json.loads(captured.err.strip().splitlines()[-1])["subcommand"] == "describe"
    assert run("describe", corpus, "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "describe.csv")))
    assert len(rows) == 4 and rows[0]["count"] == "27"


def test_preprocess_imu(corpus, tmp_path):
    assert run("preprocess-imu", corpus, "--out", tmp_path, "--window", 60, "--stride", 30) == 0
    arrays = checkpoint.load(tmp_path / "windows.mmev")
    index = list(csv.DictReader(open(tmp_path / "index.csv")))
    assert len(arrays) == len(index) == 54
    first = index[0]
    assert arrays[first["sample_id"]].shape == (int(first["n_windows"]), 60, 4, 3)


def test_preprocess_skel(corpus, tmp_path):
    assert run("preprocess-skel", corpus, "--out", tmp_path, "--preset", "desk", "--augment") == 0
    index = list(csv.DictReader(open(tmp_path / "index.csv")))
    vol = checkpoint.load(tmp_path / index[0]["file"])["volume"]
    assert vol.shape == (53, 8, 16, 16) and vol.dtype == np.float32


def test_train_outputs(trained):
    for rel in ("model.cfg", "run.json", "imu/branch.ckpt", "imu/record.json", "skeleton/branch.ckpt",
                "model/model.cfg", "model/model.ckpt", "model/record.json", "manifest.json"):
        assert (trained / rel).exists(), rel
    info = json.loads((trained / "run.json").read_text())
    assert info["classes"] == list(range(1, 10)) and len(info["split"]["test"]) > 0
    record = json.loads((trained / "model" / "record.json").read_text())
    assert "accuracy" in record["test"] and "wall_time" not in record


def test_train_head_phase_reuses_branches(corpus, trained, tmp_path):
    args = ["train", corpus, "--out", tmp_path, *TOY_TRAIN, "--phase", "head",
            "--imu-from", trained / "imu", "--skeleton-from", trained / "skeleton"]
    assert run(*args) == 0
    a = checkpoint.load(trained / "model" / "model.ckpt")
    b = checkpoint.load(tmp_path / "model" / "model.ckpt")
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert run("train", corpus, "--out", tmp_path / "x", *TOY_TRAIN, "--phase", "head") == 4


def test_eval_and_f1(corpus, trained, tmp_path):
    ev_dir, f1_dir = tmp_path / "ev", tmp_path / "f1"
    assert run("eval", corpus, "--model", trained, "--out", ev_dir, "--plot-data") == 0
    norm = list(csv.DictReader(open(ev_dir / "confusion_normalized.csv")))
    assert len(norm) == 81 and "fraction" in norm[0]
    metrics = json.loads((ev_dir / "metrics.json").read_text())
    record = json.loads((trained / "model" / "record.json").read_text())
    assert metrics["accuracy"] == pytest.approx(record["test"]["accuracy"])
    preds = list(csv.DictReader(open(ev_dir / "predictions.csv")))
    assert len(preds) == metrics["n"] and "p_8" in preds[0]
    assert run("f1", ev_dir / "predictions.csv", "--out", f1_dir, "--participants", corpus / "participants.csv",
               "--plot-data") == 0
    long = list(csv.DictReader(open(f1_dir / "f1_long.csv")))
    assert len(long) == 2 * 9 and {r["group"] for r in long} == {"ND", "Stroke"}
    rows = list(csv.reader(open(f1_dir / "f1_grid.csv")))
    assert rows[0] == ["participant", *map(str, range(9))]
    assert set(json.loads((f1_dir / "group_f1.json").read_text())["group_mean_f1"]) <= {"ND", "Stroke"}


def test_dtw_and_merge_labels(corpus, tmp_path):
    assert run("dtw", corpus, "--out", tmp_path / "d", "--modality", "skeleton", "--step", 4, "--sessions", 1,
               "--threads", 1, "--plot-data") == 0
    assert len((tmp_path / "d" / "summary_matrix.csv").read_text().splitlines()) == 10
    merges = json.loads((tmp_path / "d" / "merges.json").read_text())
    assert merges["threshold"] == 0.3 and len(merges["ranked"]) == 36
    header = next(csv.reader(open(tmp_path / "d" / "matrix.csv")))
    assert len(header) == 1 + 18
    assert run("merge-labels", corpus, "--out", tmp_path / "m") == 0
    rows = list(csv.DictReader(open(tmp_path / "m" / "label_map.csv")))
    assert [r["class"] for r in rows] == ["1", "2", "2", "3", "4", "5", "6", "6", "7"]


def test_replay_identical_and_detects_change(corpus, tmp_path, capsys):
    out = tmp_path / "d"
    assert run("dtw", corpus, "--out", out, "--step", 8, "--sessions", 1) == 0
    assert run("replay", out / "manifest.json") == 0
    assert "identical" in capsys.readouterr().out
    m = manifest(out)
    m["outputs"]["matrix.csv"] = "0" * 64
    (tmp_path / "edited.json").write_text(json.dumps(m))
    assert run("replay", tmp_path / "edited.json") == 4
    m["config"]["corpus"] = str(tmp_path / "elsewhere")
    m["inputs"] = {str(tmp_path): "0" * 64}
    (tmp_path / "moved.json").write_text(json.dumps(m))
    assert run("replay", tmp_path / "moved.json") == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mmevit.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mmevit" in proc.stdout
