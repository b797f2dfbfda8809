"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteError, ValidationError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _scalar(value) -> float:
    out = float(np.asarray(value.data if isinstance(value, Tensor) else value).reshape(-1)[0])
    if not np.isfinite(out):
        raise NonFiniteError("objective is not finite")
    return out


def finite_difference_check(f, params, h=1e-6, tol=1e-5, max_coords=None, seed=0, floor=1e-8):
    """Compare ``backward()`` gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params`` (a list, or a name -> Tensor mapping). Each parameter's error is ``max|analytic - numeric|``
    divided by the larger of the two gradients' max magnitude (at least
    ``floor``); the report's error is the worst parameter. ``max_coords``
    samples that many coordinates per parameter instead of all of them.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    if isinstance(params, dict):
        names, params = list(params), list(params.values())
    else:
        params = list(params)
        names = [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    out = f()
    _scalar(out)
    if out.requires_grad:
        out.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    per_param = {}
    worst = 0.0
    with no_grad():
        for name, p, ga in zip(names, params, analytic):
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ValidationError(f"{name}: parameter storage is not contiguous")
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            num = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalar(f())
                flat[i] = orig - h
                fm = _scalar(f())
                flat[i] = orig
                num[n] = (fp - fm) / (2.0 * h)
            ana = ga.reshape(-1)[idx].astype(np.float64)
            scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), floor)
            err = float(np.abs(ana - num).max(initial=0.0) / scale)
            per_param[name] = err
            worst = max(worst, err)
    return GradCheckReport(max_rel_error=worst, tol=tol, per_param=per_param)
