"""Upper bounds on the total coverage gap between calibration and test scores.

Two flavors are provided for both the labeled case (test scores known) and
the unlabeled case (test scores sandwiched by an auxiliary pair):

* ``weighted_cdf``: the calibration density times the absolute CDF gap,
  integrated over [0, 1];
* ``w1``: the maximum calibration density times a 1-Wasserstein distance.

The ``grid`` estimator of the weighted-CDF integral assigns every point of an
equally spaced grid the cell of width 1/(K-1) around it, integrates the
piecewise-constant CDF gap exactly over that cell and multiplies by the
density at the grid point. Since the density factor never exceeds the grid
maximum used by the ``w1`` flavor, ``weighted_cdf <= w1`` holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import empirical as emp
from .auxiliary import AuxiliaryPair
from .density import DEFAULT_GRID_SIZE, KdeDensity, density_at, grid_points, max_density
from .empirical import WeightedEmpirical
from .errors import ValidationError

WEIGHTED_CDF = "weighted_cdf"
W1 = "w1"
GRID = "grid"
EXPECTATION = "expectation"
FLAVORS = (WEIGHTED_CDF, W1)
ESTIMATORS = (GRID, EXPECTATION)

DEFAULT_ALPHA_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass
class BoundReport:
    value: float
    flavor: str
    labeled: bool
    estimator: str
    grid_size: int
    max_density: float
    bandwidth: float
    dominance_verified: bool
    raw_value: float
    components: dict = field(default_factory=dict)
    dkw: dict | None = None

    @property
    def display_value(self) -> float:
        # the gap itself never exceeds 1 but the bound can
        return min(self.value, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["display_value"] = self.display_value
        return d


def cell_edges(grid_size: int) -> np.ndarray:
    g = grid_points(grid_size)
    return np.concatenate(([0.0], 0.5 * (g[:-1] + g[1:]), [1.0]))


@dataclass(frozen=True)
class SegmentTable:
    """Maximal intervals on which every involved CDF is constant.

    ``p_count[j]`` is the number of calibration atoms at or below the left end
    of segment ``j``; the weighted calibration CDF there is the cumulative
    weight of the first ``p_count[j]`` sorted atoms.
    """

    left: np.ndarray
    length: np.ndarray
    p_count: np.ndarray
    cell: np.ndarray
    others: tuple

    @classmethod
    def build(cls, p_support: np.ndarray, others, grid_size: int) -> "SegmentTable":
        edges = cell_edges(grid_size)
        pts = np.unique(np.concatenate([p_support, edges] + [o.support for o in others]))
        left, right = pts[:-1], pts[1:]
        mid = 0.5 * (left + right)
        cell = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, grid_size - 1)
        p_count = np.searchsorted(p_support, left, side="right")
        return cls(left, right - left, p_count, cell, tuple(emp.cdf_at(o, left) for o in others))

    def p_cdf(self, sorted_weights: np.ndarray) -> np.ndarray:
        cum = np.concatenate(([0.0], np.cumsum(sorted_weights)))
        cum[-1] = 1.0
        return cum[self.p_count]


def _labeled_integrand(fp, fq):
    return np.abs(fp - fq)


def _unlabeled_integrand(fp, f_up, f_low):
    return 0.5 * (np.abs(fp - f_up) + np.abs(fp - f_low) + (f_low - f_up))


def _check_grid(grid_size: int):
    if grid_size < 2:
        raise ValidationError("grid_size must be at least 2")


def _check_options(flavor: str, estimator: str):
    if flavor not in FLAVORS:
        raise ValidationError(f"unknown flavor {flavor!r}")
    if estimator not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {estimator!r}")


def _weighted_cdf_value(p, others, kde, estimator, grid_size, integrand):
    if estimator == GRID:
        table = SegmentTable.build(p.support, others, grid_size)
        dens = density_at(kde, grid_points(grid_size))
        vals = integrand(table.p_cdf(p.weights), *table.others)
        return float(np.sum(dens[table.cell] * table.length * vals))
    fp = emp.cdf_at(p, p.support)
    vals = integrand(fp, *(emp.cdf_at(o, p.support) for o in others))
    return float(np.dot(p.weights, vals))


def labeled_bound(
    p: WeightedEmpirical,
    q: WeightedEmpirical,
    kde: KdeDensity,
    flavor: str = WEIGHTED_CDF,
    estimator: str = GRID,
    grid_size: int = DEFAULT_GRID_SIZE,
) -> BoundReport:
    """Bound on the total coverage gap from labeled test scores ``q``."""
    _check_grid(grid_size)
    _check_options(flavor, estimator)
    peak, _ = max_density(kde, grid_size)
    dist = emp.w1(p, q)
    if flavor == W1:
        value = peak * dist
    else:
        value = _weighted_cdf_value(p, (q,), kde, estimator, grid_size, _labeled_integrand)
    return BoundReport(
        value=value,
        flavor=flavor,
        labeled=True,
        estimator=estimator,
        grid_size=grid_size,
        max_density=peak,
        bandwidth=kde.bandwidth,
        dominance_verified=True,
        raw_value=value,
        components={"w1": dist},
    )


def unlabeled_bound(
    p: WeightedEmpirical,
    pair: AuxiliaryPair,
    kde: KdeDensity,
    flavor: str = WEIGHTED_CDF,
    estimator: str = GRID,
    grid_size: int = DEFAULT_GRID_SIZE,
) -> BoundReport:
    """Bound on the total coverage gap using an auxiliary pair instead of test labels."""
    _check_grid(grid_size)
    _check_options(flavor, estimator)
    mean_gap = emp.mean(pair.upper) - emp.mean(pair.lower)
    if pair.dominance_verified and mean_gap < -1e-9:
        raise ValidationError("pair claims dominance but its upper mean is below its lower mean")
    peak, _ = max_density(kde, grid_size)
    to_upper = emp.w1(p, pair.upper)
    to_lower = emp.w1(p, pair.lower)
    if flavor == W1:
        value = 0.5 * peak * (to_upper + to_lower + mean_gap)
    else:
        value = _weighted_cdf_value(
            p, (pair.upper, pair.lower), kde, estimator, grid_size, _unlabeled_integrand
        )
    return BoundReport(
        value=value,
        flavor=flavor,
        labeled=False,
        estimator=estimator,
        grid_size=grid_size,
        max_density=peak,
        bandwidth=kde.bandwidth,
        dominance_verified=pair.dominance_verified,
        raw_value=value,
        components={
            "w1_to_upper": to_upper,
            "w1_to_lower": to_lower,
            "mean_gap": mean_gap,
            "pair_kind": pair.kind,
        },
    )


def dkw_correct(
    report: BoundReport,
    n: int,
    m: int,
    d: float,
    weights=None,
    rebound: Callable[[WeightedEmpirical], BoundReport] | None = None,
    p: WeightedEmpirical | None = None,
    seed: int = 42,
) -> BoundReport:
    """Add the two DKW band widths to a bound, holding with probability >= 1 - 2d.

    For non-uniform calibration ``weights`` the calibration size is replaced
    by the effective sample size. If ``p`` and ``rebound`` are given, the raw
    term is recomputed on ``round(n_eff)`` i.i.d. draws from ``p``.
    """
    if not 0.0 < d < 1.0:
        raise ValidationError("d must lie in (0, 1)")
    raw = report.raw_value
    n_eff = float(n)
    resampled = None
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if not np.allclose(w, w[0], rtol=0, atol=1e-15):
            n_eff = emp.effective_sample_size(w)
            if rebound is not None and p is not None:
                k = max(1, int(round(n_eff)))
                draws = emp.resample(p, k, seed)
                raw = rebound(emp.from_scores(draws)).raw_value
                resampled = k
    band_p = emp.DkwBand.from_d(n_eff, d)
    band_q = emp.DkwBand.from_d(float(m), d)
    corrected = raw + band_p.epsilon + band_q.epsilon
    return replace(
        report,
        value=corrected,
        raw_value=raw,
        dkw={
            "d": d,
            "confidence": 1.0 - 2.0 * d,
            "calibration_band": asdict(band_p),
            "test_band": asdict(band_q),
            "resampled_size": resampled,
            "corrected_value": corrected,
        },
    )


def alpha_specific_bound(
    p: WeightedEmpirical,
    pair: AuxiliaryPair,
    alpha: float,
    n_cal_draws: int,
    n: int,
    m: int,
    d: float,
    seed: int = 42,
) -> float:
    """Monte Carlo bound on the coverage gap at one miscoverage level ``alpha``.

    Averages the half-sum of pairwise CDF gaps between ``p`` and the pair at
    the conformal threshold of ``n_cal_draws`` resampled calibration sets of
    size ``n``, then adds the DKW terms for ``n`` and ``m``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    draws = rng.choice(p.support.size, size=(n_cal_draws, n), replace=True, p=p.weights)
    samples = np.sort(p.support[draws], axis=1)
    k = min(max(math.ceil((n + 1) * (1.0 - alpha) - 1e-12), 1), n)
    thresholds = samples[:, k - 1]
    fp = emp.cdf_at(p, thresholds)
    fl = emp.cdf_at(pair.lower, thresholds)
    fu = emp.cdf_at(pair.upper, thresholds)
    gap = 0.5 * (np.abs(fp - fl) + np.abs(fp - fu) + np.abs(fl - fu))
    return float(np.mean(gap)) + emp.dkw_epsilon(n, d) + emp.dkw_epsilon(m, d)


def total_gap_empirical(
    cal: WeightedEmpirical,
    test_scores,
    alpha_grid=None,
    convention: str | None = None,
    threshold_fn: Callable[[float], float] | None = None,
) -> float:
    """Mean over ``alpha_grid`` of |(1 - alpha) - test coverage at the calibrated threshold|."""
    t = np.asarray(test_scores, dtype=float).ravel()
    if t.size == 0:
        raise ValidationError("test scores must be nonempty")
    grid = DEFAULT_ALPHA_GRID if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    if grid.size == 0 or grid.min() <= 0.0 or grid.max() >= 1.0:
        raise ValidationError("alpha grid must be nonempty and inside (0, 1)")
    t = np.sort(t)
    gaps = []
    for a in grid:
        thr = threshold_fn(a) if threshold_fn is not None else emp.quantile(cal, 1.0 - a, convention)
        cov = np.searchsorted(t, thr, side="right") / t.size
        gaps.append(abs((1.0 - a) - cov))
    return float(np.mean(gaps))
