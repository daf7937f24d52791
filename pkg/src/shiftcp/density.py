"""Weighted Gaussian KDE on [0, 1] with boundary reflection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_GRID_SIZE = 512
BANDWIDTH_FLOOR = 1e-3
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class KdeDensity:
    centers: np.ndarray
    weights: np.ndarray
    bandwidth: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if c.ndim != 1 or c.shape != w.shape or c.size == 0:
            raise ValidationError("centers and weights must be equal-length nonempty vectors")
        if c.min() < 0.0 or c.max() > 1.0:
            raise ValidationError("centers must lie in [0, 1]")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must lie on the simplex")
        if not self.bandwidth > 0:
            raise ValidationError("bandwidth must be positive")
        c.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))


def gaussian_kernel(x, h: float):
    return _INV_SQRT_2PI / h * np.exp(-0.5 * (np.asarray(x) / h) ** 2)


def silverman_bandwidth(scores, weights) -> float:
    """1.06 * weighted std * n_eff^(-1/5), floored at ``BANDWIDTH_FLOOR``."""
    s = np.asarray(scores, dtype=float)
    w = np.asarray(weights, dtype=float)
    mu = np.dot(w, s)
    var = max(float(np.dot(w, (s - mu) ** 2)), 0.0)
    n_eff = 1.0 / np.sum(w * w)
    h = 1.06 * math.sqrt(var) * n_eff ** (-0.2)
    return max(h, BANDWIDTH_FLOOR)


def fit_kde(scores, weights=None, bandwidth: float | None = None) -> KdeDensity:
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValidationError("scores must be nonempty")
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValidationError("scores must lie in [0, 1]")
    w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, dtype=float)
    if bandwidth is None:
        bandwidth = silverman_bandwidth(s, w)
    return KdeDensity(s, w, bandwidth)


def reflected_kernel_matrix(points, centers, h: float) -> np.ndarray:
    """Matrix M[k, i] of the reflected kernel of center i at point k.

    Density is ``M @ weights``; one reflection about each boundary.
    """
    t = np.asarray(points, dtype=float)[:, None]
    c = np.asarray(centers, dtype=float)[None, :]
    return gaussian_kernel(t - c, h) + gaussian_kernel(t + c, h) + gaussian_kernel(t - (2.0 - c), h)


def reflected_kernel_matrix_dh(points, centers, h: float) -> np.ndarray:
    """Derivative of ``reflected_kernel_matrix`` with respect to the bandwidth."""
    t = np.asarray(points, dtype=float)[:, None]
    c = np.asarray(centers, dtype=float)[None, :]
    out = np.zeros((t.shape[0], c.shape[1]))
    for x in (t - c, t + c, t - (2.0 - c)):
        out += gaussian_kernel(x, h) * (x * x / h**3 - 1.0 / h)
    return out


def density_at(kde: KdeDensity, t):
    """Reflected density at ``t`` (scalar or array), all points in [0, 1]."""
    pts = np.atleast_1d(np.asarray(t, dtype=float))
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise ValidationError("density is only defined on [0, 1]")
    vals = reflected_kernel_matrix(pts, kde.centers, kde.bandwidth) @ kde.weights
    return float(vals[0]) if np.ndim(t) == 0 else vals


def grid_points(grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise ValidationError("grid_size must be at least 2")
    return np.linspace(0.0, 1.0, grid_size)


def max_density(kde: KdeDensity, grid_size: int = DEFAULT_GRID_SIZE) -> tuple[float, int]:
    """Largest density on an equally spaced grid over [0, 1], and its first argmax."""
    vals = density_at(kde, grid_points(grid_size))
    k = int(np.argmax(vals))
    return float(vals[k]), k
