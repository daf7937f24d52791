"""Comparison methods: uncorrected, oracle, true likelihood ratio, entropy-scaled CP."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import entr

from . import empirical as emp
from .auxiliary import ScoreMatrix
from .empirical import WeightedEmpirical
from .errors import ValidationError

SYNTH_TILT = (-1.0, 0.5, -0.25, -0.1)

UNCORRECTED = "uncorrected"
OPTIMAL = "optimal"
TRUE_LR = "true-lr"
ECP = "ecp"
OT_MINMAX = "ot-minmax"
OT_FU = "ot-fu"

METHODS = {
    UNCORRECTED: "uniform weights on the calibration scores",
    OPTIMAL: "uniform weights on held-out labeled test-domain scores",
    TRUE_LR: "calibration weights from the analytic covariate likelihood ratio",
    ECP: "threshold divided by the entropy quantile of test predictions when above 1",
    OT_MINMAX: "learned weights, row min/max auxiliary pair",
    OT_FU: "learned weights, model/uniform sampled auxiliary pair",
}
WEIGHTED_METHODS = (TRUE_LR, OT_MINMAX, OT_FU)


def uncorrected(cal_scores) -> WeightedEmpirical:
    return emp.from_scores(cal_scores)


def oracle(test_labeled_scores) -> WeightedEmpirical:
    """Calibrate directly on labeled test-domain scores (not available in practice)."""
    return emp.from_scores(test_labeled_scores)


def true_lr_weights(cal_inputs, tilt=SYNTH_TILT) -> np.ndarray:
    """Self-normalized exp(tilt . x) over the calibration inputs."""
    x = np.atleast_2d(np.asarray(cal_inputs, dtype=float))
    t = np.asarray(tilt, dtype=float)
    if x.shape[1] != t.size or x.shape[0] == 0:
        raise ValidationError(f"inputs must be nonempty rows of length {t.size}")
    logit = x @ t
    w = np.exp(logit - logit.max())
    return w / w.sum()


def prediction_entropy(probs) -> np.ndarray:
    """Natural-log entropy of each row; 0 log 0 is taken as 0."""
    return entr(np.asarray(probs, dtype=float)).sum(axis=1)


def ecp_scale(test: ScoreMatrix, alpha: float) -> float:
    if test.probs is None:
        raise ValidationError("entropy scaling needs test probabilities")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    ent = np.sort(prediction_entropy(test.probs))
    n = ent.size
    # same order statistic as the conformal threshold
    k = min(max(math.ceil((n + 1) * (1.0 - alpha) - 1e-12), 1), n)
    u = ent[k - 1]
    return max(1.0, float(u))


def ecp_threshold(cal: WeightedEmpirical, test: ScoreMatrix, alpha: float, convention=None) -> float:
    """Calibration quantile divided by max(1, u), u the (1 - alpha) entropy quantile."""
    base = emp.quantile(cal, 1.0 - alpha, convention)
    return base / ecp_scale(test, alpha)
