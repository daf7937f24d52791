"""Slow reference implementations used as test oracles.

Written with plain Python loops and the math module so they share no code
path with the vectorized package implementation.
"""

from __future__ import annotations

import math


def cdf(support, weights, t):
    return sum(w for s, w in zip(support, weights) if s <= t)


def w1_cosorted(a, b):
    """Exact 1-D optimal transport cost between equal-size uniform samples."""
    assert len(a) == len(b)
    return sum(abs(x - y) for x, y in zip(sorted(a), sorted(b))) / len(a)


def gauss(x, h):
    return math.exp(-0.5 * (x / h) ** 2) / (h * math.sqrt(2.0 * math.pi))


def reflected_density(centers, weights, h, t):
    return sum(w * (gauss(t - c, h) + gauss(t + c, h) + gauss(t - (2.0 - c), h)) for c, w in zip(centers, weights))


def conformal_quantile(scores, level):
    s = sorted(scores)
    n = len(s)
    k = math.ceil((n + 1) * level - 1e-12)
    return s[min(max(k, 1), n) - 1]


def plain_quantile(support, weights, level):
    pairs = sorted(zip(support, weights))
    acc = 0.0
    for s, w in pairs:
        acc += w
        if acc >= level - 1e-12:
            return s
    return pairs[-1][0]


def cell_integral(integrand, dists, grid_size, density):
    """Sum over grid cells of density(g_k) times the exact integral of ``integrand`` on the cell.

    ``integrand`` receives the list of CDF values of ``dists`` (each a
    (support, weights) pair) at a point; CDFs are right-continuous step
    functions, so the integrand is constant between consecutive breakpoints.
    """
    step = 1.0 / (grid_size - 1)
    total = 0.0
    for k in range(grid_size):
        lo = max(0.0, (k - 0.5) * step)
        hi = min(1.0, (k + 0.5) * step)
        pts = {lo, hi}
        for sup, _ in dists:
            pts.update(x for x in sup if lo < x < hi)
        pts = sorted(pts)
        acc = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            acc += (b - a) * integrand([cdf(s, w, a) for s, w in dists])
        total += density(k * step) * acc
    return total
