"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

# below this magnitude relative error degrades to absolute error
REL_FLOOR = 1e-6


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f: Callable[[], float], inputs: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               h: float = 1e-5) -> dict[str, float]:
    """Max relative error per named block between ``analytic`` and finite differences of ``f``.

    ``f`` must read the arrays in ``inputs`` by reference so perturbations are seen.
    """
    return {name: relative_error(analytic[name], numerical_gradient(f, x, h)) for name, x in inputs.items()}


def passes(report: dict[str, float], tol: float) -> bool:
    return all(err < tol for err in report.values())
