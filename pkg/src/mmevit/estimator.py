"""scikit-learn style front end: preprocessing transformers and the ensemble classifier.

Inputs ``X`` are sequences of :class:`~mmevit.data.PairedSample`; targets
default to each sample's ``target``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import imu
from .models import ModelConfig
from .pipeline import PipelineConfig, prepare_segments, render_volumes
from .tensor import default_dtype
from .training import (
    EnsemblePredictor,
    TrainConfig,
    aggregate,
    evaluate,
    train_head,
    train_unimodal,
)
from .validation import check_choice, check_int, check_samples, check_targets

_DTYPES = {"float32": np.float32, "float64": np.float64}


class IMUWindowizer(TransformerMixin, BaseEstimator):
    """Normalise each IMU segment and cut it into ``[n, window, 4, 3]`` images.

    With ``norm_scope="corpus"`` the accelerometer and gyroscope
    statistics are learned in ``fit``; otherwise ``fit`` only validates.
    """

    def __init__(self, window=120, stride=60, norm_scope="segment", pad=False, eps=1e-8):
        self.window = window
        self.stride = stride
        self.norm_scope = norm_scope
        self.pad = pad
        self.eps = eps

    def fit(self, X, y=None):
        samples = check_samples(X)
        check_int(self.window, "window", 1)
        check_int(self.stride, "stride", 1)
        check_choice(self.norm_scope, ("segment", "corpus"), "norm_scope")
        self.stats_ = imu.corpus_stats([s.imu for s in samples]) if self.norm_scope == "corpus" else None
        self.n_features_in_ = 12
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return [
            imu.segment_windows(s.imu, self.window, self.stride, self.eps, self.pad, self.stats_)
            for s in check_samples(X)
        ]


class SkeletonHeatmapper(TransformerMixin, BaseEstimator):
    """Render each skeleton sequence as a ``[53, frames, grid, grid]`` heatmap volume."""

    def __init__(self, grid=56, sigma=0.6, frames=48, policy="uniform", sigma_squared=False):
        self.grid = grid
        self.sigma = sigma
        self.frames = frames
        self.policy = policy
        self.sigma_squared = sigma_squared

    def _pipeline(self):
        return PipelineConfig(grid=self.grid, sigma=self.sigma, frames=self.frames, policy=self.policy,
                              sigma_squared=self.sigma_squared)

    def fit(self, X, y=None):
        check_samples(X)
        self._pipeline()
        self.n_features_in_ = 53
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        pipe = self._pipeline()
        segs = prepare_segments(check_samples(X), pipe, dtype=np.float64)
        return render_volumes(segs, pipe, dtype=np.float64)


class EnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Three-phase IMU + skeleton ensemble.

    ``fit`` pretrains the IMU branch and the skeleton branch, each with a
    temporary linear classifier, then trains the fusion head on frozen
    branch representations. Predictions are per segment, aggregated over
    the segment's IMU windows. Defaults are the desk-scale configuration.
    """

    def __init__(self, dim=32, heads=4, imu_depth=6, skel_depth=2, skel_patch=(1, 1),
                 cnn_channels=(8, 16, 16, 8), dropout=0.1, window=120, stride=60, norm_scope="segment",
                 grid=16, frames=8, sigma=0.6, epochs=(5, 5, 5), lr=(1e-3, 1e-3, 1e-3),
                 batch_size=(32, 8, 32), augment=False, aggregation="mean", dtype="float32", seed=0):
        self.dim = dim
        self.heads = heads
        self.imu_depth = imu_depth
        self.skel_depth = skel_depth
        self.skel_patch = skel_patch
        self.cnn_channels = cnn_channels
        self.dropout = dropout
        self.window = window
        self.stride = stride
        self.norm_scope = norm_scope
        self.grid = grid
        self.frames = frames
        self.sigma = sigma
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.augment = augment
        self.aggregation = aggregation
        self.dtype = dtype
        self.seed = seed

    def _pipeline(self):
        return PipelineConfig(window=self.window, stride=self.stride, norm_scope=self.norm_scope,
                              grid=self.grid, sigma=self.sigma, frames=self.frames)

    def _phase_configs(self, n_classes):
        out = []
        for k, phase in enumerate(("imu", "skeleton", "head")):
            out.append(TrainConfig(phase, batch_size=self.batch_size[k], lr=self.lr[k], epochs=self.epochs[k],
                                   seed=self.seed, class_count=n_classes, augment=self.augment))
        return out

    def _segments(self, X, y=None):
        samples = check_samples(X)
        targets = check_targets(y if y is not None else [s.target for s in samples], len(samples))
        segs = prepare_segments(samples, self.pipeline_, dtype=_DTYPES[self.dtype])
        return segs, targets

    def fit(self, X, y=None, X_valid=None, y_valid=None):
        check_choice(self.dtype, tuple(_DTYPES), "dtype")
        check_choice(self.aggregation, ("mean", "vote"), "aggregation")
        for name in ("epochs", "lr", "batch_size"):
            if len(getattr(self, name)) != 3:
                raise ValueError(f"{name} needs one value per phase (imu, skeleton, head)")
        self.pipeline_ = self._pipeline()
        segs, targets = self._segments(X, y)
        self.classes_ = np.unique(targets)
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        for s, t in zip(segs, targets):
            s.target = index[t]
        valid = None
        if X_valid is not None:
            valid, vt = self._segments(X_valid, y_valid)
            unknown = set(vt.tolist()) - set(index)
            if unknown:
                raise ValueError(f"validation labels {sorted(unknown)} not seen in training")
            for s, t in zip(valid, vt):
                s.target = index[t]
        n = len(self.classes_)
        self.model_config_ = ModelConfig.scaled(
            n_classes=n, dim=self.dim, heads=self.heads, grid=self.grid, frames=self.frames,
            cnn_channels=tuple(self.cnn_channels), imu_depth=self.imu_depth, skel_depth=self.skel_depth,
            skel_patch=tuple(self.skel_patch), window=self.window, dropout=self.dropout, seed=self.seed,
        )
        imu_cfg, skel_cfg, head_cfg = self._phase_configs(n)
        with default_dtype(_DTYPES[self.dtype]):
            imu_branch, _, r1 = train_unimodal(segs, "imu", imu_cfg, self.model_config_, self.pipeline_, valid)
            skel_branch, _, r2 = train_unimodal(segs, "skeleton", skel_cfg, self.model_config_, self.pipeline_,
                                                valid)
            self.model_, r3 = train_head(segs, imu_branch, skel_branch, head_cfg, self.pipeline_, valid,
                                         self.model_config_)
        self.records_ = [r1, r2, r3]
        return self

    def predict_proba(self, X):
        """Segment-level class probabilities ``[n_samples, n_classes]``."""
        check_is_fitted(self, "model_")
        segs, _ = self._segments(X, [0] * len(check_samples(X)))
        predictor = EnsemblePredictor(self.model_, self.pipeline_)
        return np.stack([aggregate(predictor.segment_probabilities(s), self.aggregation) for s in segs])

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y=None):
        """Loss, accuracy and per-sample predictions (class indices into ``classes_``)."""
        check_is_fitted(self, "model_")
        segs, targets = self._segments(X, y)
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        unknown = set(targets.tolist()) - set(index)
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} not seen in training")
        for s, t in zip(segs, targets):
            s.target = index[t]
        return evaluate(EnsemblePredictor(self.model_, self.pipeline_), segs, method=self.aggregation)
