"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .data import PairedSample
from .exceptions import NonFiniteError, ShapeError, ValidationError


def check_samples(X, min_samples=1, name="X") -> list:
    """Materialise ``X`` as a list of :class:`PairedSample`."""
    if isinstance(X, (str, bytes, np.ndarray)):
        raise ValidationError(f"{name} must be a sequence of paired samples, got {type(X).__name__}")
    try:
        samples = list(X)
    except TypeError:
        raise ValidationError(f"{name} must be iterable, got {type(X).__name__}") from None
    bad = [i for i, s in enumerate(samples) if not isinstance(s, PairedSample)]
    if bad:
        raise ValidationError(f"{name}[{bad[0]}] is {type(samples[bad[0]]).__name__}, expected PairedSample")
    if len(samples) < min_samples:
        raise ValidationError(f"{name} needs at least {min_samples} samples, got {len(samples)}")
    return samples


def check_targets(y, n, name="y") -> np.ndarray:
    """1-D integer label vector of length ``n``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise ShapeError(f"{name} has {arr.shape[0]} entries for {n} samples")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.issubdtype(arr.dtype, np.number) or not np.all(np.mod(arr, 1) == 0):
            raise ValidationError(f"{name} must hold integer labels")
        arr = arr.astype(np.int64)
    return arr


def check_array(x, ndim=None, name="array", dtype=np.float64) -> np.ndarray:
    """Finite numeric array with an optional rank check."""
    try:
        arr = np.asarray(x, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not numeric: {exc}") from None
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite values")
    return arr


def check_int(value, name, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0, open_low=False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    v = float(value)
    if not (low < v if open_low else low <= v) or v > high:
        raise ValidationError(f"{name} must lie in {'(' if open_low else '['}{low}, {high}], got {v}")
    return v


def check_choice(value, choices, name):
    if value not in choices:
        raise ValidationError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
