"""Split conformal prediction sets, coverage and set-size metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import empirical as emp
from .auxiliary import ScoreMatrix
from .bounds import DEFAULT_ALPHA_GRID, total_gap_empirical
from .empirical import WeightedEmpirical
from .errors import ValidationError

CSV_COLUMNS = ("alpha", "coverage", "mean_size", "method")


@dataclass(frozen=True, eq=False)
class PredictionSet:
    classes: np.ndarray
    threshold: float

    def __len__(self) -> int:
        return int(self.classes.size)

    def __contains__(self, y) -> bool:
        return bool(np.any(self.classes == y))


@dataclass
class CoverageReport:
    alpha_grid: list
    coverage: list
    mean_size: list
    total_gap: float
    method: str
    convention: str
    thresholds: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.alpha_grid) == len(self.coverage) == len(self.mean_size)):
            raise ValidationError("per-alpha fields must have equal length")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "convention": self.convention,
            "total_gap": self.total_gap,
            "alpha_grid": list(self.alpha_grid),
            "coverage": list(self.coverage),
            "mean_size": list(self.mean_size),
            "thresholds": list(self.thresholds),
        }

    def rows(self):
        for a, c, s in zip(self.alpha_grid, self.coverage, self.mean_size):
            yield {"alpha": a, "coverage": c, "mean_size": s, "method": self.method}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(float(v)) if k != "method" else v) for k, v in row.items()})
        return buf.getvalue()


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")


def threshold(cal: WeightedEmpirical, alpha: float, convention: str | None = emp.CONFORMAL) -> float:
    _check_alpha(alpha)
    return emp.quantile(cal, 1.0 - alpha, convention)


def predict_set(row_scores, thr: float) -> PredictionSet:
    s = np.asarray(row_scores, dtype=float).ravel()
    return PredictionSet(np.flatnonzero(s <= thr), float(thr))


def evaluate(
    cal: WeightedEmpirical,
    test: ScoreMatrix,
    labels,
    alpha_grid=(0.1,),
    convention: str | None = None,
    method: str = "uncorrected",
    threshold_fn: Callable[[float], float] | None = None,
    gap_grid=None,
) -> CoverageReport:
    """Coverage and mean set size per alpha, plus the total coverage gap.

    ``threshold_fn`` overrides the calibration quantile (used by methods
    that rescale it). The total gap averages over ``gap_grid``, which
    defaults to 0.01, 0.02, ..., 0.99 independently of ``alpha_grid``.
    """
    true = test.true_scores(labels)
    alphas = [float(a) for a in np.atleast_1d(np.asarray(alpha_grid, dtype=float))]
    if not alphas:
        raise ValidationError("alpha grid must be nonempty")
    conv = emp.resolve_convention(cal, convention)
    thr_of = threshold_fn if threshold_fn is not None else (lambda a: threshold(cal, a, conv))
    cov, size, thrs = [], [], []
    for a in alphas:
        _check_alpha(a)
        t = float(thr_of(a))
        thrs.append(t)
        cov.append(float(np.mean(true <= t)))
        size.append(float(np.mean(np.sum(test.scores <= t, axis=1))))
    gap = total_gap_empirical(
        cal,
        true,
        DEFAULT_ALPHA_GRID if gap_grid is None else gap_grid,
        conv,
        threshold_fn,
    )
    return CoverageReport(alphas, cov, size, gap, method, conv, thrs)
