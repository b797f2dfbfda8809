"""Command-line interface: ``mmevit <subcommand> [options]``.

Every subcommand writes its artifacts plus ``manifest.json`` into
``--out``. Option values resolve as defaults < ``--config`` JSON file <
explicit flags. ``mmevit replay manifest.json`` re-executes a run and
compares artifact digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, dtw, evaluation, synth
from .data import build_label_map, load_corpus, merge_labels, read_participants, split_dataset
from .exceptions import MmevitError, NonFiniteError, ShapeError, ValidationError
from .imu import ModalityStats, corpus_stats, segment_windows
from .models import EnsembleModel, IMUBranch, ModelConfig, SkeletonBranch
from .pipeline import PipelineConfig, prepare_segments, render_volume
from .tensor import default_dtype
from .training import (
    PHASE_DEFAULTS,
    EnsemblePredictor,
    EvalResult,
    IMUPredictor,
    SkeletonPredictor,
    TrainConfig,
    evaluate,
    train_head,
    train_unimodal,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4
MANIFEST = "manifest.json"
PHASES = ("imu", "skeleton", "head")
PRESETS = {
    "full": dict(dim=256, heads=8, grid=56, frames=48, cnn_channels=(32, 64, 64, 32), skel_patch=(2, 2)),
    "desk": dict(dim=32, heads=4, grid=16, frames=8, cnn_channels=(8, 16, 16, 8), skel_patch=(1, 1)),
}
DTYPES = {"float32": np.float32, "float64": np.float64}

log = logging.getLogger("mmevit")


# -- option table --------------------------------------------------------
@dataclass
class Opt:
    flag: str
    default: object = None
    help: str = ""
    type: object = str
    choices: tuple = None
    kind: str = "value"  # value | bool | append | positional

    @property
    def dest(self):
        return self.flag.lstrip("-").replace("-", "_")


def _pair(text):
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B label pair, got {text!r}") from None
    return [a, b]


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


OUT = Opt("--out", None, "output directory for artifacts and manifest.json")
CORPUS = Opt("corpus", None, "corpus directory (imu/, skeleton/, participants.csv)", kind="positional")
SEED = Opt("--seed", 0, "seed for every random draw", int)
PLOT = Opt("--plot-data", False, "also write long-format CSVs shaped for external plotters", kind="bool")

SPLIT_OPTS = [
    Opt("--split-seed", None, "seed for the 7:2:1 split (default: --seed)", int),
    Opt("--split-by", "segment", "split unit", str, ("segment", "participant")),
    Opt("--ratios", [7, 2, 1], "train,valid,test split ratios", _int_list),
    Opt("--merge-labels", False, "merge the --merge-pairs labels into single classes", kind="bool"),
    Opt("--merge-pairs", [[2, 3], [7, 8]], "label pair to merge, A:B (repeatable)", _pair, kind="append"),
]
PIPE_OPTS = [
    Opt("--window", 120, "IMU window length W", int),
    Opt("--stride", 60, "IMU window stride S", int),
    Opt("--norm-scope", "segment", "z-score statistics scope", str, ("segment", "corpus")),
    Opt("--pad", False, "reflect-pad segments shorter than one window", kind="bool"),
    Opt("--eps", 1e-8, "z-score denominator guard", float),
    Opt("--grid", None, "heatmap grid size H=W (default from --preset)", int),
    Opt("--sigma", 0.6, "Gaussian width parameter sigma", float),
    Opt("--frames", None, "heatmap frames T (default from --preset)", int),
    Opt("--policy", "uniform", "frame sampling policy", str,
        ("uniform", "first-of-subsegment", "random-of-subsegment")),
    Opt("--sigma-squared", False, "use 2*sigma^2 in the Gaussian denominator", kind="bool"),
    Opt("--flip-prob", 0.5, "horizontal flip probability during augmentation", float),
    Opt("--crop", 0.9, "crop side as a fraction of the grid during augmentation", float),
]

COMMANDS = {
    "synth": ("generate a synthetic corpus", [
        SEED, OUT,
        Opt("--nd", 8, "number of non-disabled participants", int),
        Opt("--stroke", 4, "number of stroke participants", int),
        Opt("--sessions", 8, "sessions per participant (one segment per label each)", int),
        Opt("--noise-nd", 0.3, "noise scale for ND participants", float),
        Opt("--noise-stroke", 1.0, "noise scale for stroke participants", float),
        Opt("--couple", [[2, 3], [7, 8]], "coupled (similar) label pair A:B (repeatable)", _pair, kind="append"),
        Opt("--skeleton-step", 4, "IMU samples per skeleton frame", int),
        Opt("--affected-gain", 0.5, "motion gain on the affected side of stroke participants", float),
        Opt("--coupling-strength", 0.45, "amplitude of the component separating coupled labels", float),
    ]),
    "describe": ("segment length statistics per modality and group", [
        CORPUS, Opt("--out", None, "optional output directory for describe.csv and manifest.json"),
    ]),
    "preprocess-imu": ("normalise and window IMU segments", [
        CORPUS, OUT, *PIPE_OPTS[:5],
    ]),
    "preprocess-skel": ("render skeleton heatmap volumes", [
        CORPUS, OUT, SEED,
        Opt("--preset", "full", "grid/frames defaults", str, tuple(PRESETS)),
        *PIPE_OPTS[5:],
        Opt("--augment", False, "apply one random flip/crop draw per segment", kind="bool"),
        Opt("--dtype", "float32", "stored value type", str, tuple(DTYPES)),
    ]),
    "train": ("train branches and the fusion head", [
        CORPUS, OUT, SEED,
        Opt("--phase", "all", "phase to run", str, ("all", *PHASES)),
        Opt("--batch", None, "batch size; one value or imu,skeleton,head (default: per-phase defaults)", _int_list),
        Opt("--lr", None, "learning rate; one value or imu,skeleton,head (default: per-phase defaults)", _float_list),
        Opt("--epochs", None, "epochs; one value or imu,skeleton,head (default: per-phase defaults)", _int_list),
        Opt("--preset", "full", "model and grid size preset", str, tuple(PRESETS)),
        Opt("--dim", None, "embedding width of both ViTs", int),
        Opt("--heads", None, "attention heads", int),
        Opt("--imu-depth", 6, "IMU ViT depth", int),
        Opt("--skel-depth", 2, "skeleton ViT depth", int),
        Opt("--dropout", 0.1, "dropout probability", float),
        Opt("--dtype", "float32", "training precision", str, tuple(DTYPES)),
        Opt("--augment", True, "flip/crop augmentation in the skeleton phase", kind="bool"),
        Opt("--validate", True, "evaluate the validation split after every epoch", kind="bool"),
        Opt("--patience", 0, "early stopping patience in epochs (0 = off)", int),
        Opt("--train-groups", "ND,Stroke", "groups kept in the training split", str),
        Opt("--imu-from", None, "directory of a finished imu phase (for --phase head)"),
        Opt("--skeleton-from", None, "directory of a finished skeleton phase (for --phase head)"),
        *SPLIT_OPTS, *PIPE_OPTS,
    ]),
    "eval": ("evaluate a trained ensemble", [
        CORPUS, OUT,
        Opt("--model", None, "directory written by train (phase all or head)"),
        Opt("--split", "test", "which split to evaluate", str, ("train", "valid", "test", "all")),
        Opt("--window-level", False, "score every window instead of every segment", kind="bool"),
        Opt("--aggregation", "mean", "window to segment aggregation", str, ("mean", "vote")),
        PLOT,
    ]),
    "f1": ("per-participant, per-label F1 grid from a predictions CSV", [
        Opt("predictions", None, "predictions.csv written by eval", kind="positional"), OUT,
        Opt("--participants", None, "participants.csv for group membership (default: from ids)"),
        PLOT,
    ]),
    "dtw": ("pairwise multivariate DTW and label-merge suggestions", [
        CORPUS, OUT,
        Opt("--modality", "imu", "series to compare", str, ("imu", "skeleton")),
        Opt("--group", "all", "participant group", str, ("ND", "Stroke", "all")),
        Opt("--mode", "matched", "channel pairing", str, dtw.MODES),
        Opt("--step", 1, "keep every step-th time point", int),
        Opt("--band", None, "Sakoe-Chiba band half-width (default: none)", int),
        Opt("--threshold", 0.3, "merge pairs with mean DTW <= threshold x mean cross-label DTW", float),
        Opt("--sessions", None, "only use the first N sessions of each participant", int),
        Opt("--threads", None, "worker threads (default: MMEVIT_THREADS, 0 = all cores)", int),
        PLOT,
    ]),
    "merge-labels": ("write the merged label map and per-segment targets", [
        CORPUS, OUT,
        Opt("--pairs", [[2, 3], [7, 8]], "label pair A:B to merge (repeatable)", _pair, kind="append"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmevit", description="IMU + skeleton action recognition pipeline.")
    parser.add_argument("--version", action="version", version=f"mmevit {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name, (summary, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", help="JSON file of option values (flags override it)")
        for o in opts:
            text = f"{o.help} (default: {o.default})"
            if o.kind == "positional":
                p.add_argument(o.dest, help=o.help)
            elif o.kind == "bool":
                p.add_argument(o.flag, dest=o.dest, action=argparse.BooleanOptionalAction, default=None, help=text)
            elif o.kind == "append":
                p.add_argument(o.flag, dest=o.dest, type=o.type, action="append", default=None, help=text)
            else:
                p.add_argument(o.flag, dest=o.dest, type=o.type, choices=o.choices, default=None, help=text)
    rp = sub.add_parser("replay", help="re-run a manifest and compare artifact digests",
                        description="re-run a manifest and compare artifact digests")
    rp.add_argument("manifest", help="manifest.json from an earlier run")
    rp.add_argument("--out", default=None, help="directory for the replayed artifacts (default: temporary)")
    return parser


def resolve(command, args: dict, config_path=None) -> dict:
    """Merge option defaults, the config file and explicit flags."""
    opts = COMMANDS[command][1]
    cfg = {o.dest: o.default for o in opts}
    if config_path:
        with open(config_path) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ValidationError(f"{config_path}: config must be a JSON object")
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ValidationError(f"{config_path}: unknown option(s) {sorted(unknown)} for {command}")
        cfg.update(file_cfg)
    for o in opts:
        if args.get(o.dest) is not None:
            cfg[o.dest] = args[o.dest]
    for o in opts:
        if o.kind == "positional" and cfg[o.dest] is None:
            raise ValidationError(f"{command}: missing {o.dest}")
        if o.choices and cfg[o.dest] is not None and cfg[o.dest] not in o.choices:
            raise ValidationError(f"{command}: {o.flag} must be one of {o.choices}")
    if command != "describe" and cfg.get("out") is None and "out" in cfg:
        raise ValidationError(f"{command}: --out is required")
    # absolute paths keep the manifest valid from any working directory
    for key in (*INPUT_KEYS, "out"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    return cfg


# -- digests and manifests -----------------------------------------------
def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def path_digest(path) -> str:
    """File digest, or a digest over (relative path, file digest) for a directory."""
    path = Path(path)
    if path.is_file():
        return file_digest(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no such file or directory: {path}")
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST):
        h.update(f"{f.relative_to(path).as_posix()}\0{file_digest(f)}\n".encode())
    return h.hexdigest()


def output_digests(out: Path) -> dict:
    return {f.relative_to(out).as_posix(): file_digest(f)
            for f in sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)}


INPUT_KEYS = ("corpus", "predictions", "participants", "model", "imu_from", "skeleton_from")


def execute(command, cfg) -> dict:
    """Run one subcommand from a resolved config and write its manifest."""
    started = time.perf_counter()
    inputs = {cfg[k]: path_digest(cfg[k]) for k in INPUT_KEYS if cfg.get(k)}
    out = Path(cfg["out"]) if cfg.get("out") else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    RUNNERS[command](cfg, out)
    manifest = {
        "subcommand": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "inputs": inputs,
        "outputs": output_digests(out) if out is not None else {},
        "out": str(out) if out is not None else None,
        "wall_time": time.perf_counter() - started,
        "version": __version__,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if out is not None:
        (out / MANIFEST).write_text(text)
    else:
        sys.stderr.write(json.dumps(manifest, sort_keys=True) + "\n")
    return manifest


def replay(manifest_path, out=None) -> int:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    try:
        command, cfg = manifest["subcommand"], dict(manifest["config"])
        recorded = manifest["outputs"]
    except (KeyError, TypeError):
        raise ValidationError(f"{manifest_path}: not a run manifest") from None
    if command not in COMMANDS:
        raise ValidationError(f"{manifest_path}: unknown subcommand {command!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if path_digest(path) != digest:
            raise ValidationError(f"input {path} changed since the recorded run")
    tmp = None
    if out is None:
        tmp = tempfile.mkdtemp(prefix="mmevit-replay-")
        out = tmp
    try:
        if cfg.get("out") is not None:
            cfg["out"] = str(out)
        fresh = execute(command, cfg)["outputs"]
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    diff = sorted(k for k in set(recorded) | set(fresh) if recorded.get(k) != fresh.get(k))
    if diff:
        print(f"replay differs in {len(diff)} artifact(s): {', '.join(diff[:10])}")
        return EXIT_VALIDATION
    print(f"replay identical: {len(fresh)} artifact(s)")
    return EXIT_OK


# -- shared helpers ------------------------------------------------------
def _write_json(path, obj):
    evaluation.write_json(obj, path)


def _pipeline(cfg) -> PipelineConfig:
    preset = PRESETS[cfg.get("preset") or "full"]
    return PipelineConfig(
        window=cfg.get("window", 120), stride=cfg.get("stride", 60), norm_scope=cfg.get("norm_scope", "segment"),
        eps=cfg.get("eps", 1e-8), pad=bool(cfg.get("pad", False)),
        grid=cfg["grid"] if cfg.get("grid") is not None else preset["grid"],
        sigma=cfg["sigma"], frames=cfg["frames"] if cfg.get("frames") is not None else preset["frames"],
        policy=cfg["policy"], sigma_squared=bool(cfg["sigma_squared"]),
        flip_prob=cfg["flip_prob"], crop=cfg["crop"],
    )


def _pairs(value):
    return [tuple(int(v) for v in p) for p in (value or [])]


def _labelled_corpus(cfg):
    samples = load_corpus(cfg["corpus"])
    if cfg.get("merge_labels"):
        samples, label_map = merge_labels(samples, _pairs(cfg["merge_pairs"]))
    else:
        label_map = build_label_map(())
    return samples, label_map


def _split(cfg, samples):
    seed = cfg["split_seed"] if cfg.get("split_seed") is not None else cfg["seed"]
    return split_dataset(samples, tuple(cfg["ratios"]), seed, by=cfg["split_by"])


def _per_phase(value, phase_index, key, phase):
    if value is None:
        return PHASE_DEFAULTS[phase][key]
    if len(value) == 1:
        return value[0]
    if len(value) != 3:
        raise ValidationError(f"--{key.replace('_', '-')} takes one value or three (imu,skeleton,head)")
    return value[phase_index]


def _train_config(cfg, phase, n_classes) -> TrainConfig:
    k = PHASES.index(phase)
    return TrainConfig(
        phase, batch_size=_per_phase(cfg["batch"], k, "batch_size", phase), lr=_per_phase(cfg["lr"], k, "lr", phase),
        epochs=_per_phase(cfg["epochs"], k, "epochs", phase), seed=cfg["seed"], class_count=n_classes,
        augment=bool(cfg["augment"]), patience=cfg["patience"],
    )


def _model_config(cfg, n_classes) -> ModelConfig:
    preset = PRESETS[cfg["preset"]]
    pick = lambda key: cfg[key] if cfg.get(key) is not None else preset[key]
    return ModelConfig.scaled(
        n_classes=n_classes, dim=pick("dim"), heads=pick("heads"), grid=pick("grid"), frames=pick("frames"),
        cnn_channels=preset["cnn_channels"], imu_depth=cfg["imu_depth"], skel_depth=cfg["skel_depth"],
        skel_patch=preset["skel_patch"], window=cfg["window"], dropout=cfg["dropout"], seed=cfg["seed"],
    )


def _write_predictions(path, result: EvalResult, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(names)
        w.writerow(["sample_id", "participant", "group", "true", "pred", *(f"p_{i}" for i in range(n))])
        for p in result.predictions:
            w.writerow([p["sample_id"], p["participant"], p["group"], p["true"], p["pred"],
                        *(repr(float(v)) for v in p["probs"])])


# -- runners -------------------------------------------------------------
def run_synth(cfg, out):
    gen = synth.GenConfig(
        seed=cfg["seed"], nd=cfg["nd"], stroke=cfg["stroke"], sessions=cfg["sessions"],
        noise_nd=cfg["noise_nd"], noise_stroke=cfg["noise_stroke"], couple=_pairs(cfg["couple"]),
        skeleton_step=cfg["skeleton_step"], affected_gain=cfg["affected_gain"],
        coupling_strength=cfg["coupling_strength"],
    )
    samples = synth.generate(gen, out)
    log.info("wrote %d segments to %s", len(samples), out)


def run_describe(cfg, out):
    rows = synth.describe(load_corpus(cfg["corpus"]))
    cols = ("modality", "group", "count", *synth.STAT_COLUMNS)
    print(" ".join(f"{c:>9}" for c in cols))
    for r in rows:
        print(" ".join(f"{r[c]:>9}" if isinstance(r[c], (str, int)) else f"{r[c]:>9.1f}" for c in cols))
    if out is not None:
        with open(out / "describe.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def run_preprocess_imu(cfg, out):
    samples = load_corpus(cfg["corpus"])
    stats = corpus_stats([s.imu for s in samples]) if cfg["norm_scope"] == "corpus" else None
    tensors, rows = {}, []
    for s in samples:
        wins = segment_windows(s.imu, cfg["window"], cfg["stride"], cfg["eps"], bool(cfg["pad"]), stats)
        tensors[s.sample_id] = wins
        rows.append((s.sample_id, s.participant, s.group, int(s.label), wins.shape[0]))
    checkpoint.save(out / "windows.mmev", tensors)
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "participant", "group", "label", "n_windows"])
        w.writerows(rows)


def run_preprocess_skel(cfg, out):
    samples = load_corpus(cfg["corpus"])
    pipe = _pipeline(cfg)
    dtype = DTYPES[cfg["dtype"]]
    (out / "volumes").mkdir(exist_ok=True)
    segs = prepare_segments(samples, pipe, dtype=dtype)
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "participant", "group", "label", "file"])
        for i, (s, seg) in enumerate(zip(samples, segs)):
            rng = np.random.default_rng([cfg["seed"], i])
            vol = render_volume(seg, pipe, rng, augment=bool(cfg["augment"]), dtype=dtype)
            name = f"volumes/{s.sample_id}.mmev"
            checkpoint.save(out / name, {"volume": vol})
            w.writerow([s.sample_id, s.participant, s.group, int(s.label), name])


def _save_branch(directory, branch, classifier, record, extra):
    directory.mkdir(parents=True, exist_ok=True)
    state = {f"branch.{k}": v for k, v in branch.state_dict().items()}
    state.update({f"classifier.{k}": v for k, v in classifier.state_dict().items()})
    checkpoint.save(directory / "branch.ckpt", state)
    _write_json(directory / "record.json", record.to_dict())
    _write_json(directory / "run.json", extra)


def _load_branch(directory, modality, model_cfg):
    directory = Path(directory)
    state = checkpoint.load(directory / "branch.ckpt")
    rng = np.random.default_rng(0)
    if modality == "imu":
        branch = IMUBranch(model_cfg.imu, rng)
    else:
        branch = SkeletonBranch(model_cfg.skeleton_cnn, model_cfg.skeleton_vit, rng)
    branch.load_state_dict({k[len("branch."):]: v for k, v in state.items() if k.startswith("branch.")})
    branch.eval()
    return branch


def run_train(cfg, out):
    samples, label_map = _labelled_corpus(cfg)
    split = _split(cfg, samples)
    groups = {g.strip() for g in cfg["train_groups"].split(",") if g.strip()}
    train_samples = [s for s in split.train if s.group in groups]
    if not train_samples:
        raise ValidationError(f"no training samples in groups {sorted(groups)}")
    pipe = _pipeline(cfg)
    dtype = DTYPES[cfg["dtype"]]
    classes = sorted(set(label_map.mapping.values()))
    n = len(classes)
    model_cfg = _model_config(cfg, n)
    # corpus-scope statistics come from the training split only
    stats = corpus_stats([s.imu for s in train_samples]) if pipe.norm_scope == "corpus" else None
    prep = lambda part: prepare_segments(part, pipe, classes, stats, dtype)
    train, valid, test = prep(train_samples), prep(split.valid), prep(split.test)
    valid_arg = valid if cfg["validate"] else None
    run_info = {
        "pipeline": pipe.to_dict(), "classes": classes, "class_names": list(label_map.names),
        "label_map": {str(k): v for k, v in sorted(label_map.mapping.items())},
        "split": {"train": [s.sample_id for s in split.train], "valid": [s.sample_id for s in split.valid],
                  "test": [s.sample_id for s in split.test]},
        "train_groups": sorted(groups), "dtype": cfg["dtype"],
        "imu_stats": asdict(stats) if stats is not None else None,
    }
    (out / "model.cfg").write_text(model_cfg.to_text())
    phase = cfg["phase"]
    with default_dtype(dtype):
        branches = {}
        for modality in ("imu", "skeleton"):
            if phase not in ("all", modality):
                continue
            tc = _train_config(cfg, modality, n)
            branch, clf, record = train_unimodal(train, modality, tc, model_cfg, pipe, valid=valid_arg)
            predictor = IMUPredictor(branch, clf) if modality == "imu" else SkeletonPredictor(branch, clf, pipe)
            record.test = evaluate(predictor, test).to_dict()
            _save_branch(out / modality, branch, clf, record, run_info)
            branches[modality] = branch
        if phase in ("all", "head"):
            if phase == "head":
                if not cfg.get("imu_from") or not cfg.get("skeleton_from"):
                    raise ValidationError("--phase head needs --imu-from and --skeleton-from")
                branches = {"imu": _load_branch(cfg["imu_from"], "imu", model_cfg),
                            "skeleton": _load_branch(cfg["skeleton_from"], "skeleton", model_cfg)}
            tc = _train_config(cfg, "head", n)
            model, record = train_head(train, branches["imu"], branches["skeleton"], tc, pipe,
                                       valid=valid_arg, model_cfg=model_cfg)
            record.test = evaluate(EnsemblePredictor(model, pipe), test).to_dict()
            model.save(out / "model")
            _write_json(out / "model" / "record.json", record.to_dict())
    _write_json(out / "run.json", run_info)


def run_eval(cfg, out):
    if not cfg.get("model"):
        raise ValidationError("eval needs --model")
    mdir = Path(cfg["model"])
    with open(mdir / "run.json") as fh:
        info = json.load(fh)
    pipe = PipelineConfig(**info["pipeline"])
    mapping = {int(k): v for k, v in info["label_map"].items()}
    classes = info["classes"]
    samples = load_corpus(cfg["corpus"])
    samples = [replace(s, target=mapping[int(s.label)]) for s in samples]
    if cfg["split"] != "all":
        wanted = set(info["split"][cfg["split"]])
        samples = [s for s in samples if s.sample_id in wanted]
        if len(samples) != len(wanted):
            missing = len(wanted) - len(samples)
            raise ValidationError(f"corpus is missing {missing} segment(s) of the {cfg['split']} split")
    dtype = DTYPES[info["dtype"]]
    with default_dtype(dtype):
        model = EnsembleModel.load(mdir / "model")
    model.eval()
    stats = ModalityStats(**info["imu_stats"]) if info.get("imu_stats") else None
    segs = prepare_segments(samples, pipe, classes, stats, dtype)
    with default_dtype(dtype):
        result = evaluate(EnsemblePredictor(model, pipe), segs, window_level=bool(cfg["window_level"]),
                          method=cfg["aggregation"])
    names = info["class_names"]
    truths = [p["true"] for p in result.predictions]
    preds = [p["pred"] for p in result.predictions]
    pids = [p["participant"] for p in result.predictions]
    groups = {p["participant"]: p["group"] for p in result.predictions}
    report = evaluation.metrics_report(preds, truths, pids, len(names), groups, names)
    report.update(loss=result.loss, split=cfg["split"], window_level=bool(cfg["window_level"]),
                  aggregation=cfg["aggregation"])
    _write_json(out / "metrics.json", report)
    _write_predictions(out / "predictions.csv", result, names)
    cm = evaluation.confusion(preds, truths, len(names), names)
    cm.to_csv(out / "confusion.csv")
    if cfg.get("plot_data"):
        cm.to_csv(out / "confusion_normalized.csv", normalize=True)


def run_f1(cfg, out):
    with open(cfg["predictions"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{cfg['predictions']}: no predictions")
    try:
        truths = [int(r["true"]) for r in rows]
        preds = [int(r["pred"]) for r in rows]
        pids = [r["participant"] for r in rows]
        n_classes = sum(1 for k in rows[0] if k.startswith("p_"))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{cfg['predictions']}: malformed predictions file ({exc})") from None
    if cfg.get("participants"):
        groups = {k: m.group for k, m in read_participants(cfg["participants"]).items()}
    else:
        groups = {r["participant"]: r["group"] for r in rows}
    grid = evaluation.f1_grid(preds, truths, pids, list(range(n_classes)))
    grid.to_csv(out / "f1_grid.csv")
    if cfg.get("plot_data"):
        with open(out / "f1_long.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["participant", "group", "label", "f1"])
            for pid, row in zip(grid.participants, grid.values):
                w.writerows((pid, groups.get(pid, ""), lab, "NaN" if np.isnan(v) else repr(float(v)))
                            for lab, v in zip(grid.labels, row))
    _write_json(out / "group_f1.json", {"group_mean_f1": evaluation.group_mean_f1(grid, groups),
                                        "nan_policy": "NaN cells excluded"})


def run_dtw(cfg, out):
    samples = load_corpus(cfg["corpus"])
    if cfg["group"] != "all":
        samples = [s for s in samples if s.group == cfg["group"]]
    if cfg.get("sessions") is not None:
        keep = {f"s{i:02d}" for i in range(1, cfg["sessions"] + 1)}
        samples = [s for s in samples if s.sample_id.split("_")[1] in keep]
    matrix = dtw.segment_matrix(samples, cfg["modality"], cfg["mode"], cfg["step"], cfg["band"], cfg["threads"])
    matrix.to_csv(out / "matrix.csv")
    summary = dtw.label_similarity_summary(matrix)
    summary.to_csv(out / "summary.csv")
    if cfg.get("plot_data"):
        with open(out / "summary_matrix.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", *summary.labels])
            for lab, row in zip(summary.labels, summary.means):
                w.writerow([lab, *("NaN" if np.isnan(v) else repr(float(v)) for v in row)])
    merges = dtw.suggest_merges(summary, cfg["threshold"])
    _write_json(out / "merges.json", {"threshold": cfg["threshold"], "pairs": [list(p) for p in merges],
                                      "ranked": [[a, b, v] for a, b, v in summary.pairs()]})


def run_merge_labels(cfg, out):
    samples = load_corpus(cfg["corpus"])
    merged, label_map = merge_labels(samples, _pairs(cfg["pairs"]))
    with open(out / "label_map.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "label_name", "class", "class_name"])
        w.writerows(label_map.rows())
    with open(out / "targets.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "class"])
        w.writerows((s.sample_id, int(s.label), s.target) for s in merged)


RUNNERS = {
    "synth": run_synth, "describe": run_describe, "preprocess-imu": run_preprocess_imu,
    "preprocess-skel": run_preprocess_skel, "train": run_train, "eval": run_eval, "f1": run_f1,
    "dtw": run_dtw, "merge-labels": run_merge_labels,
}


def _error(kind, exc) -> None:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        values = vars(args)
        cfg = resolve(args.command, values, values.get("config"))
        execute(args.command, cfg)
        return EXIT_OK
    except (ValidationError, ShapeError, NonFiniteError, json.JSONDecodeError) as exc:
        _error("validation", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        _error("io", exc)
        return EXIT_IO
    except (MmevitError, ValueError, KeyError) as exc:
        _error("validation", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
