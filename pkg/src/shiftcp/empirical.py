"""Finite one-dimensional score distributions.

Everything downstream (bounds, reweighting, conformal thresholds) works on
``WeightedEmpirical``: a sorted vector of scores in [0, 1] with co-sorted
probability weights. Ties are kept as separate atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PLAIN = "plain"
CONFORMAL = "conformal"
DEFAULT_DOMINANCE_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class WeightedEmpirical:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.ndim != 1 or s.shape != w.shape or s.size == 0:
            raise ValidationError("support and weights must be equal-length nonempty vectors")
        if np.any(np.diff(s) < 0):
            raise ValidationError("support must be nondecreasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be nonnegative and sum to 1")
        if s[0] < 0.0 or s[-1] > 1.0:
            raise ValidationError("support must lie in [0, 1]")
        object.__setattr__(self, "support", _frozen(s))
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self) -> int:
        return self.support.size

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0])) or bool(
            np.allclose(self.weights, 1.0 / self.support.size, rtol=0, atol=1e-15)
        )

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative weights with a leading zero, length n + 1."""
        return np.concatenate(([0.0], np.cumsum(self.weights)))


def from_scores(scores, weights=None) -> WeightedEmpirical:
    """Build a sorted weighted empirical distribution from raw scores.

    Weights, when given, are renormalized to sum to one. Scores outside
    [0, 1] are rejected since they are one minus a model probability.
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValidationError("scores must be nonempty")
    if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
        raise ValidationError("scores must lie in [0, 1]")
    if weights is None:
        w = np.full(s.size, 1.0 / s.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != s.shape:
            raise ValidationError("weights must match scores in length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValidationError("weights must have positive sum")
        w = w / total
    order = np.argsort(s, kind="stable")
    return WeightedEmpirical(s[order], w[order])


def cdf_at(dist: WeightedEmpirical, t):
    """Right-continuous CDF; accepts a scalar or an array of points."""
    idx = np.searchsorted(dist.support, t, side="right")
    out = dist.cumulative[idx]
    # pin the top step to exactly 1 so F(max) == 1 despite cumsum rounding
    out = np.where(idx == dist.support.size, 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


def resolve_convention(dist: WeightedEmpirical, convention: str | None) -> str:
    """Conformal order statistics only make sense for uniform weights."""
    if convention is None:
        return CONFORMAL if dist.is_uniform else PLAIN
    if convention not in (PLAIN, CONFORMAL):
        raise ValidationError(f"unknown quantile convention {convention!r}")
    if convention == CONFORMAL and not dist.is_uniform:
        return PLAIN
    return convention


def quantile(dist: WeightedEmpirical, level: float, convention: str | None = CONFORMAL) -> float:
    """Empirical quantile at ``level``.

    ``plain`` returns inf{s : F(s) >= level}. ``conformal`` returns the
    ceil((n + 1) * level)-th order statistic, clamped to the largest score.
    Weighted distributions always use ``plain``.
    """
    if not 0.0 <= level <= 1.0:
        raise ValidationError("level must lie in [0, 1]")
    conv = resolve_convention(dist, convention)
    n = dist.support.size
    if conv == CONFORMAL:
        k = math.ceil((n + 1) * level - 1e-12)
        k = min(max(k, 1), n)
        return float(dist.support[k - 1])
    cum = dist.cumulative[1:]
    cum[-1] = 1.0
    k = int(np.searchsorted(cum, level - 1e-12, side="left"))
    return float(dist.support[min(k, n - 1)])


def _merged_cdfs(*dists: WeightedEmpirical):
    grid = np.unique(np.concatenate([d.support for d in dists]))
    return grid, [cdf_at(d, grid) for d in dists]


def w1(p: WeightedEmpirical, q: WeightedEmpirical) -> float:
    """Exact 1-Wasserstein distance as the integral of |F_p - F_q|."""
    grid, (fp, fq) = _merged_cdfs(p, q)
    if grid.size < 2:
        return 0.0
    return float(np.sum(np.abs(fp[:-1] - fq[:-1]) * np.diff(grid)))


def dominates(a: WeightedEmpirical, b: WeightedEmpirical, tol: float = DEFAULT_DOMINANCE_TOL) -> bool:
    """True iff ``a`` first-order stochastically dominates ``b``: F_a <= F_b + tol."""
    if tol < 0:
        raise ValidationError("tol must be nonnegative")
    _, (fa, fb) = _merged_cdfs(a, b)
    return bool(np.all(fa <= fb + tol))


def mean(dist: WeightedEmpirical) -> float:
    return float(np.dot(dist.weights, dist.support))


@dataclass(frozen=True)
class DkwBand:
    """Uniform CDF band of half-width ``epsilon`` holding with prob. ``confidence``."""

    epsilon: float
    confidence: float
    n_effective: float

    @classmethod
    def from_d(cls, n_effective: float, d: float) -> "DkwBand":
        return cls(dkw_epsilon(n_effective, d), 1.0 - d, float(n_effective))

    def is_consistent(self, rtol: float = 1e-12) -> bool:
        expected = dkw_epsilon(self.n_effective, 1.0 - self.confidence)
        return math.isclose(self.epsilon, expected, rel_tol=rtol)


def dkw_epsilon(n_effective: float, d: float) -> float:
    """sqrt(log(2/d) / (2 n)): P(sup|F_n - F| > eps) <= d."""
    if not n_effective > 0:
        raise ValidationError("n_effective must be positive")
    if not 0.0 < d < 1.0:
        raise ValidationError("d must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / d) / (2.0 * n_effective))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def resample(dist: WeightedEmpirical, k: int, seed: int) -> np.ndarray:
    """Draw ``k`` i.i.d. scores from ``dist``; deterministic in ``seed``."""
    if k < 1:
        raise ValidationError("k must be at least 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(dist.support.size, size=k, replace=True, p=dist.weights)
    return dist.support[idx].copy()
