"""Confusion matrices, per-participant F1 grids and group aggregates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError, ValidationError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C, C] rows = true, cols = predicted
    names: list

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else math.nan

    def normalized(self) -> np.ndarray:
        """Row-stochastic copy; rows without support stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(float)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, path, normalize=False):
        values = self.normalized() if normalize else self.counts
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true", "pred", "fraction" if normalize else "count"])
            for t, row in enumerate(values):
                for p, v in enumerate(row):
                    w.writerow([self.names[t], self.names[p], repr(float(v)) if normalize else int(v)])


def _labels(values, n_classes, what):
    arr = np.asarray(values)
    if arr.size == 0:
        return arr.astype(int)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError(f"{what} must be integer class indices")
        arr = arr.astype(int)
    if arr.min() < 0 or arr.max() >= n_classes:
        raise ValidationError(f"{what} contain labels outside [0, {n_classes})")
    return arr


def confusion(predictions, truths, n_classes, names=None) -> ConfusionMatrix:
    """Count matrix with ``counts[t, p]`` over aligned 0-based label lists."""
    if n_classes < 1:
        raise ValidationError("n_classes must be >= 1")
    if len(predictions) != len(truths):
        raise ShapeError(f"{len(predictions)} predictions vs {len(truths)} truths")
    p = _labels(predictions, n_classes, "predictions")
    t = _labels(truths, n_classes, "truths")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = list(names) if names is not None else list(range(n_classes))
    if len(names) != n_classes:
        raise ShapeError("one name per class required")
    return ConfusionMatrix(counts, names)


def f1(tp, fp, fn) -> float:
    """2TP / (2TP + FP + FN); NaN when nothing was present or predicted."""
    if min(tp, fp, fn) < 0:
        raise ValidationError(f"counts must be non-negative, got {(tp, fp, fn)}")
    denom = 2 * tp + fp + fn
    return math.nan if denom == 0 else 2 * tp / denom


@dataclass
class F1Grid:
    participants: list
    labels: list
    values: np.ndarray  # [P, L], NaN where a label is neither present nor predicted

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["participant", *self.labels])
            for pid, row in zip(self.participants, self.values):
                w.writerow([pid, *("NaN" if math.isnan(v) else repr(float(v)) for v in row)])


def one_vs_rest_counts(predictions, truths, labels):
    """``[L, 3]`` array of (TP, FP, FN) per label."""
    p, t = np.asarray(predictions), np.asarray(truths)
    out = np.zeros((len(labels), 3), dtype=np.int64)
    for k, lab in enumerate(labels):
        out[k] = [np.sum((p == lab) & (t == lab)), np.sum((p == lab) & (t != lab)),
                  np.sum((p != lab) & (t == lab))]
    return out


def f1_grid(predictions, truths, participant_ids, labels, participants=None) -> F1Grid:
    """Per participant and label, one-vs-rest F1 within that participant's segments.

    ``participants`` fixes the row order; any id in ``participant_ids``
    that is not listed raises.
    """
    n = len(predictions)
    if len(truths) != n or len(participant_ids) != n:
        raise ShapeError("predictions, truths and participant ids must be aligned")
    pids = np.asarray(participant_ids, dtype=object)
    if participants is None:
        participants = sorted(set(pids.tolist()))
    else:
        participants = list(participants)
        unknown = set(pids.tolist()) - set(participants)
        if unknown:
            raise ValidationError(f"unknown participant ids: {sorted(unknown)}")
    labels = list(labels)
    p, t = np.asarray(predictions), np.asarray(truths)
    grid = np.full((len(participants), len(labels)), np.nan)
    for r, pid in enumerate(participants):
        mask = pids == pid
        counts = one_vs_rest_counts(p[mask], t[mask], labels)
        grid[r] = [f1(*c) for c in counts]
    return F1Grid(participants, labels, grid)


def group_mean_f1(grid: F1Grid, groups) -> dict:
    """Mean of the non-NaN cells of each group's participants.

    ``groups`` maps participant id to group name (or is a list of
    participant metadata objects).
    """
    if not isinstance(groups, dict):
        groups = {m.id: m.group for m in groups}
    missing = [p for p in grid.participants if p not in groups]
    if missing:
        raise ValidationError(f"no group for participants {missing}")
    out = {}
    for g in sorted(set(groups[p] for p in grid.participants)):
        rows = [i for i, p in enumerate(grid.participants) if groups[p] == g]
        cells = grid.values[rows]
        finite = cells[~np.isnan(cells)]
        if finite.size == 0:
            raise ValidationError(f"group {g!r} has no defined F1 cells")
        out[g] = float(finite.mean())
    return out


def metrics_report(predictions, truths, participant_ids, n_classes, groups=None, names=None) -> dict:
    """Accuracy, confusion counts and F1 summaries as a JSON-ready dict."""
    cm = confusion(predictions, truths, n_classes, names)
    labels = list(range(n_classes))
    grid = f1_grid(predictions, truths, participant_ids, labels)
    counts = one_vs_rest_counts(predictions, truths, labels)
    per_class = [f1(*c) for c in counts]
    report = {
        "n": cm.total,
        "accuracy": cm.accuracy,
        "confusion": cm.counts.tolist(),
        "class_names": [str(v) for v in cm.names],
        "per_class_f1": [None if math.isnan(v) else v for v in per_class],
        "nan_policy": "NaN cells excluded from means",
    }
    if groups is not None:
        report["group_mean_f1"] = group_mean_f1(grid, groups)
    return report


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
