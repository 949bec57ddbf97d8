"""Central finite-difference oracle for gradient verification.

The oracle re-runs a scalar-valued closure with individual parameter entries
perturbed in place, so it is independent of the tape-based backward path it
checks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Array

FD_STEP = 1e-5


def fd_gradient(fn: Callable[[], float], arr: Array, h: float = FD_STEP) -> np.ndarray:
    """Full central-difference gradient of fn() w.r.t. every entry of arr."""
    flat = arr.data.ravel()
    grad = np.zeros_like(arr.data)
    gflat = grad.ravel()
    for i in range(flat.size):
        gflat[i] = fd_gradient_entry(fn, arr, i, h)
    return grad


def fd_gradient_entry(fn: Callable[[], float], arr: Array, flat_index: int,
                      h: float = FD_STEP) -> float:
    flat = arr.data.ravel()
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    fp = fn()
    flat[flat_index] = orig - h
    fm = fn()
    flat[flat_index] = orig
    return (fp - fm) / (2.0 * h)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max relative error, with near-zero pairs treated as agreeing.

    Differences below 1e-9 count as zero (finite-difference noise floor);
    otherwise the difference is scaled by max(|analytic|, |numeric|, 1e-6).
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    rel = np.where(diff < 1e-9, 0.0, diff / denom)
    return float(rel.max()) if rel.size else 0.0
