"""Two-phase training: unimodal branch pretraining, then a head over frozen branches."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .exceptions import ValidationError
from .models import EnsembleModel, IMUBranch, Linear, MLPHead, ModelConfig, SkeletonBranch
from .optim import Adam
from .pipeline import PipelineConfig, PreparedSegment, render_volume, render_volumes
from .tensor import Tensor, default_dtype, no_grad

log = logging.getLogger(__name__)

PHASE_DEFAULTS = {
    "imu": dict(batch_size=32, lr=1e-5, epochs=40),
    "skeleton": dict(batch_size=32, lr=1e-4, epochs=100),
    "head": dict(batch_size=32, lr=1e-3, epochs=10),
}


@dataclass
class TrainConfig:
    phase: str = "imu"
    batch_size: int = None
    lr: float = None
    epochs: int = None
    seed: int = 0
    class_count: int = 9
    augment: bool = True
    weight_decay: float = 0.0
    patience: int = 0  # 0 disables early stopping

    def __post_init__(self):
        if self.phase not in PHASE_DEFAULTS:
            raise ValidationError(f"phase must be one of {sorted(PHASE_DEFAULTS)}")
        for k, v in PHASE_DEFAULTS[self.phase].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValidationError("batch_size >= 1, epochs >= 0 and lr >= 0 required")


@dataclass
class RunRecord:
    phase: str
    config: dict
    epochs: list = field(default_factory=list)
    test: dict = None
    wall_time: float = 0.0

    def to_dict(self, include_timing=False) -> dict:
        out = {"phase": self.phase, "config": self.config, "epochs": self.epochs, "test": self.test}
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    predictions: list  # dicts: sample_id, participant, group, true, pred, probs

    def to_dict(self):
        return {"loss": self.loss, "accuracy": self.accuracy, "n": len(self.predictions)}


# -- predictors ----------------------------------------------------------
class IMUPredictor:
    """Branch plus a linear classifier on its representation."""

    def __init__(self, branch, classifier):
        self.branch, self.classifier = branch, classifier

    def segment_probabilities(self, seg: PreparedSegment) -> np.ndarray:
        with no_grad():
            return T.softmax(self.classifier(self.branch(seg.windows)), axis=-1).data


class SkeletonPredictor:
    def __init__(self, branch, classifier, pipeline: PipelineConfig):
        self.branch, self.classifier, self.pipeline = branch, classifier, pipeline

    def segment_probabilities(self, seg: PreparedSegment) -> np.ndarray:
        vol = render_volume(seg, self.pipeline, dtype=self.branch.vit.patch_embed.weight.dtype)
        with no_grad():
            return T.softmax(self.classifier(self.branch(vol[None])), axis=-1).data


class EnsemblePredictor:
    """Every IMU window of a segment paired with the segment's heatmap volume."""

    def __init__(self, model: EnsembleModel, pipeline: PipelineConfig):
        self.model, self.pipeline = model, pipeline

    def segment_probabilities(self, seg: PreparedSegment) -> np.ndarray:
        dtype = self.model.head.fc.weight.dtype
        vol = render_volume(seg, self.pipeline, dtype=dtype)
        with no_grad():
            imu_rep = self.model.imu(seg.windows)
            skel_rep = self.model.skeleton(vol[None])
            fused = T.concat([imu_rep, T.broadcast_to(skel_rep, (seg.n_windows, skel_rep.shape[1]))], axis=1)
            return T.softmax(self.model.head(fused), axis=-1).data


# -- evaluation ----------------------------------------------------------
def aggregate(probs: np.ndarray, method="mean") -> np.ndarray:
    """Segment-level probabilities from per-window rows."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] == 0:
        raise ValidationError("segment has zero windows")
    mean = probs.mean(axis=0)
    if method == "mean":
        return mean
    if method == "vote":
        votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1]).astype(float)
        winners = votes == votes.max()
        out = np.where(winners, votes + mean, 0.0)
        return out / out.sum()
    raise ValidationError(f"unknown aggregation {method!r}")


def evaluate(model, segments, window_level=False, method="mean") -> EvalResult:
    """Loss, accuracy and per-sample predictions.

    ``model`` is any object with ``segment_probabilities(segment)``
    returning ``[n_windows, C]`` rows. At segment level the loss is
    ``-log`` of the aggregated probability of the true class.
    """
    preds, losses, correct = [], [], 0
    for seg in sorted(segments, key=lambda s: s.sample_id):
        probs = np.asarray(model.segment_probabilities(seg), dtype=np.float64)
        if probs.shape[0] == 0:
            raise ValidationError(f"{seg.sample_id}: zero windows")
        rows = probs if window_level else aggregate(probs, method)[None]
        for r in rows:
            pred = int(np.argmax(r))
            correct += pred == seg.target
            losses.append(-np.log(max(r[seg.target], 1e-12)))
            preds.append(dict(sample_id=seg.sample_id, participant=seg.participant, group=seg.group,
                              true=seg.target, pred=pred, probs=r.tolist()))
    n = len(preds)
    if n == 0:
        raise ValidationError("nothing to evaluate")
    return EvalResult(float(np.mean(losses)), correct / n, preds)


# -- training loops ------------------------------------------------------
def _check_classes(segments, n_classes, what="train"):
    if not segments:
        raise ValidationError(f"{what} split is empty")
    present = {s.target for s in segments}
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise ValidationError(f"{what} split has no samples of class indices {missing}")


def _run_epochs(params, cfg: TrainConfig, n_items, step_fn, valid_fn, record: RunRecord, tag):
    """Shared loop; ``step_fn(batch_indices, epoch_rng)`` returns (loss, n_correct)."""
    opt = Adam(params, lr=cfg.lr)
    best, stale = np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n_items)
        total_loss, total_correct = 0.0, 0
        for start in range(0, n_items, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss, n_correct = step_fn(batch, rng)
            loss.backward()
            if cfg.weight_decay:
                for p in params:
                    p.grad = p.grad + cfg.weight_decay * p.data
            opt.step()
            total_loss += loss.item() * len(batch)
            total_correct += n_correct
        entry = {"epoch": epoch, "train_loss": total_loss / n_items, "train_acc": total_correct / n_items}
        if valid_fn is not None:
            res = valid_fn()
            entry.update(valid_loss=res.loss, valid_acc=res.accuracy)
        record.epochs.append(entry)
        log.info("%s epoch %d: %s", tag, epoch, entry)
        if cfg.patience and valid_fn is not None:
            if entry["valid_loss"] < best - 1e-12:
                best, stale = entry["valid_loss"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break


def _dtype_of(module):
    return module.parameters()[0].dtype


def train_unimodal(train, modality, cfg: TrainConfig, model_cfg: ModelConfig, pipeline: PipelineConfig,
                   valid=None, branch=None):
    """Train one branch with a temporary linear classifier.

    Returns ``(branch, classifier, record)``. IMU windows are independent
    samples; skeleton volumes are re-rendered with augmentation each epoch.
    """
    _check_classes(train, cfg.class_count)
    started = time.perf_counter()
    init_rng = np.random.default_rng([cfg.seed, 1 if modality == "imu" else 2])
    if branch is None:
        if modality == "imu":
            branch = IMUBranch(model_cfg.imu, init_rng)
        elif modality == "skeleton":
            branch = SkeletonBranch(model_cfg.skeleton_cnn, model_cfg.skeleton_vit, init_rng)
        else:
            raise ValidationError(f"modality must be 'imu' or 'skeleton', got {modality!r}")
    dtype = _dtype_of(branch)
    with default_dtype(dtype):
        classifier = Linear(branch.repr_dim, cfg.class_count, init_rng)
    branch.set_dropout_rng(np.random.default_rng([cfg.seed, 3]))
    record = RunRecord(modality, {**asdict(cfg), "phase": modality, "pipeline": pipeline.to_dict()})
    params = branch.parameters() + classifier.parameters()

    if modality == "imu":
        index = [(i, w) for i, s in enumerate(train) for w in range(s.n_windows)]
        labels = np.array([train[i].target for i, _ in index])

        def step(batch, rng):
            x = np.stack([train[index[b][0]].windows[index[b][1]] for b in batch])
            logits = classifier(branch(x))
            y = labels[batch]
            return T.cross_entropy(logits, y), int((logits.data.argmax(1) == y).sum())

        n_items = len(index)
        make_predictor = lambda: IMUPredictor(branch, classifier)
    else:
        labels = np.array([s.target for s in train])

        def step(batch, rng):
            epoch_seed = int(rng.integers(2**31))
            rngs = [np.random.default_rng([epoch_seed, int(b)]) for b in batch]
            x = render_volumes([train[b] for b in batch], pipeline, rngs, augment=cfg.augment, dtype=dtype)
            logits = classifier(branch(x))
            y = labels[batch]
            return T.cross_entropy(logits, y), int((logits.data.argmax(1) == y).sum())

        n_items = len(train)
        make_predictor = lambda: SkeletonPredictor(branch, classifier, pipeline)

    def valid_fn():
        branch.eval()
        try:
            return evaluate(make_predictor(), valid)
        finally:
            branch.train()

    branch.train()
    _run_epochs(params, cfg, n_items, step, valid_fn if valid else None, record, modality)
    branch.eval()
    record.wall_time = time.perf_counter() - started
    return branch, classifier, record


def branch_representations(model_or_branches, segments, pipeline, dtype):
    """Frozen-branch features: per segment ``[n_windows, D_imu]`` and ``[D_skel]``."""
    imu_branch, skel_branch = model_or_branches
    imu_reps, skel_reps = [], []
    with no_grad():
        for seg in segments:
            imu_reps.append(imu_branch(seg.windows).data)
            vol = render_volume(seg, pipeline, dtype=dtype)
            skel_reps.append(skel_branch(vol[None]).data[0])
    return imu_reps, skel_reps


def train_head(train, imu_branch, skel_branch, cfg: TrainConfig, pipeline: PipelineConfig, valid=None,
               model_cfg: ModelConfig = None):
    """Fit the fusion head on concatenated frozen representations.

    Branch parameters are excluded from the optimiser and run in eval mode,
    so their values are untouched. Returns ``(EnsembleModel, record)``.
    """
    _check_classes(train, cfg.class_count)
    started = time.perf_counter()
    dtype = _dtype_of(imu_branch)
    in_dim = imu_branch.repr_dim + skel_branch.repr_dim
    with default_dtype(dtype):
        head = MLPHead(in_dim, cfg.class_count, np.random.default_rng([cfg.seed, 4]))
    if model_cfg is None:
        model_cfg = ModelConfig(n_classes=cfg.class_count, imu=imu_branch.vit.cfg,
                                skeleton_cnn=skel_branch.cnn.cfg, skeleton_vit=skel_branch.vit.cfg)
    if model_cfg.n_classes != cfg.class_count:
        raise ValidationError(f"model config has {model_cfg.n_classes} classes, training config {cfg.class_count}")
    if head.norm.gain.shape[0] != model_cfg.imu.embed_dim + model_cfg.skeleton_vit.embed_dim:
        raise ValidationError("head input dimension does not match the branch representations")
    imu_branch.eval()
    skel_branch.eval()
    flags = [p.requires_grad for p in imu_branch.parameters() + skel_branch.parameters()]
    imu_branch.requires_grad_(False)
    skel_branch.requires_grad_(False)
    try:
        imu_reps, skel_reps = branch_representations((imu_branch, skel_branch), train, pipeline, dtype)
        index = [(i, w) for i, s in enumerate(train) for w in range(s.n_windows)]
        labels = np.array([train[i].target for i, _ in index])
        feats = np.stack([np.concatenate([imu_reps[i][w], skel_reps[i]]) for i, w in index]).astype(dtype)
        record = RunRecord("head", {**asdict(cfg), "pipeline": pipeline.to_dict()})

        model = EnsembleModel.from_parts(model_cfg, imu_branch, skel_branch, head)

        def step(batch, rng):
            logits = head(Tensor(feats[batch]))
            y = labels[batch]
            return T.cross_entropy(logits, y), int((logits.data.argmax(1) == y).sum())

        def valid_fn():
            return evaluate(EnsemblePredictor(model, pipeline), valid)

        _run_epochs(head.parameters(), cfg, len(index), step, valid_fn if valid else None, record, "head")
    finally:
        for p, flag in zip(imu_branch.parameters() + skel_branch.parameters(), flags):
            p.requires_grad = flag
    model.eval()
    record.wall_time = time.perf_counter() - started
    return model, record
