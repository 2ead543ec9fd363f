from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _value(f, x) -> float:
    out = f(x)
    if isinstance(out, tuple):
        out = out[0]
    return float(out)


def finite_diff_grad(f: Callable, x: np.ndarray, eps: float = 1e-5,
                     indices: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``f`` may return a bare value or a (value, gradient) pair. When
    ``indices`` is given only those coordinates are perturbed; the rest of
    the returned vector is NaN.
    """
    x = np.asarray(x, dtype=float)
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    out = np.full(x.size, np.nan) if indices is not None else np.empty(x.size)
    flat = x.ravel().copy()
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = _value(f, flat.reshape(x.shape))
        flat[i] = orig - eps
        fm = _value(f, flat.reshape(x.shape))
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(f: Callable, x: np.ndarray, eps: float = 1e-5, rel_tol: float = 1e-4,
               indices: np.ndarray | None = None) -> GradCheckResult:
    """Compare the analytic gradient of ``f`` with central differences.

    The per-component error is |a - n| / max(|a|, |n|, 1e-8).
    """
    x = np.asarray(x, dtype=float)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = finite_diff_grad(f, x, eps, indices).ravel()
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    a, n = analytic[idx], numeric[idx]
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    worst = int(np.argmax(rel)) if rel.size else 0
    err = float(rel[worst]) if rel.size else 0.0
    return GradCheckResult(err, int(idx[worst]) if rel.size else -1, err <= rel_tol, analytic, numeric)
