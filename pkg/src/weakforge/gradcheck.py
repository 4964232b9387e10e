"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# below this magnitude a gradient coordinate is compared absolutely
ABS_FLOOR = 1e-6
# roundoff in f(theta +- h) is a few ulps of |f|; differences under
# ROUNDOFF_ULPS * eps * max(1, |f|) / h are below what the check can resolve
ROUNDOFF_ULPS = 16


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5,
                       coords: Sequence[int] | None = None) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64)
    idx = range(theta.size) if coords is None else coords
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = theta[i]
        theta[i] = old + h
        fp = f(theta)
        theta[i] = old - h
        fm = f(theta)
        theta[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> np.ndarray:
    """Per-coordinate ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def fd_resolution(loss_value: float, h: float) -> float:
    return float(ROUNDOFF_ULPS * np.finfo(np.float64).eps * max(1.0, abs(loss_value)) / h)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_coord: int
    n_coords: int
    resolution: float = 0.0
    # largest relative error before roundoff-level differences are excused
    raw_max_rel_error: float = 0.0

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def check_gradient(loss_spec, theta: np.ndarray, h: float = 1e-5,
                   coords: Sequence[int] | None = None) -> GradCheckResult:
    """Compare ``loss_spec.value_and_grad`` against central differences.

    Coordinates whose analytic and numeric values differ by less than the
    finite-difference roundoff resolution count as exact matches.
    """
    value, grad = loss_spec.value_and_grad(theta)
    idx = list(range(theta.size)) if coords is None else list(coords)
    numeric = central_difference(loss_spec.value, theta, h, idx)
    res = fd_resolution(value, h)
    err = relative_error(grad[idx], numeric)
    raw = float(err.max()) if err.size else 0.0
    err[np.abs(grad[idx] - numeric) <= res] = 0.0
    worst = int(np.argmax(err)) if err.size else 0
    return GradCheckResult(float(err.max()) if err.size else 0.0,
                           idx[worst] if idx else -1, len(idx), res, raw)
