"""Trapezoid quadrature on tensor grids with halving refinement."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when a quadrature self-check fails."""


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Trapezoid weights for a (possibly non-uniform) 1-D grid."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("grid needs at least two points")
    dx = np.diff(x)
    if np.any(dx <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.zeros_like(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.dot(trapezoid_weights(x), y))


def tensor_trapezoid(f: Callable[[np.ndarray], np.ndarray], lo: Sequence[float], hi: Sequence[float], n: int) -> float:
    """Trapezoid rule for ``f`` on the box ``[lo, hi]`` with ``n`` points
    per axis.  ``f`` maps ``(m, d)`` points to ``(m,)`` values."""
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    w = trapezoid_weights(axes[0])
    W = w
    for ax in axes[1:]:
        W = np.multiply.outer(W, trapezoid_weights(ax))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    return float(np.dot(W.ravel(), f(pts)))


def adaptive_trapezoid(
    f: Callable[[np.ndarray], np.ndarray],
    lo: Sequence[float],
    hi: Sequence[float],
    tol: float,
    n0: int = 33,
    max_points: int = 2_000_000,
) -> tuple[float, float]:
    """Halve the grid spacing until successive estimates agree to ``tol``.

    Returns ``(value, error_estimate)`` where the error estimate is the
    Richardson difference ``|I_h - I_{h/2}| / 3``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = len(lo)
    n = n0
    prev = tensor_trapezoid(f, lo, hi, n)
    while True:
        n_next = 2 * n - 1
        if n_next ** d > max_points:
            raise QuadratureError(f"no convergence to tol={tol} within {max_points} points")
        cur = tensor_trapezoid(f, lo, hi, n_next)
        diff = abs(cur - prev)
        n = n_next
        if diff <= tol:
            return cur, diff / 3.0
        prev = cur


def uniform_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 3 or not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        raise ValueError("bad grid specification")
    return np.linspace(lo, hi, n)
