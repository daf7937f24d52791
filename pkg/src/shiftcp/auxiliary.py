"""Auxiliary score distributions that sandwich an unlabeled test distribution.

Given the scores of every class for each unlabeled test row, the unknown
true-label score of that row lies between the row minimum and maximum. The
pairs built here stand in for the missing test labels in the unlabeled
coverage-gap bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .empirical import WeightedEmpirical, dominates, from_scores
from .errors import ValidationError

MIN_MAX = "min_max"
F_U = "f_U"
CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Per-row, per-class nonconformity scores, optionally with model probabilities."""

    scores: np.ndarray
    probs: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValidationError("score matrix must be 2-D with at least one row")
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise ValidationError("scores must lie in [0, 1]")
        s.flags.writeable = False
        object.__setattr__(self, "scores", s)
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=float)
            if p.shape != s.shape:
                raise ValidationError("probabilities must have the same shape as scores")
            if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
                raise ValidationError("probability rows must sum to 1")
            if np.any(np.abs(s - (1.0 - p)) > 1e-6):
                raise ValidationError("scores must equal one minus probabilities")
            p.flags.writeable = False
            object.__setattr__(self, "probs", p)

    @classmethod
    def from_probs(cls, probs) -> "ScoreMatrix":
        p = np.asarray(probs, dtype=float)
        return cls(np.clip(1.0 - p, 0.0, 1.0), p)

    @property
    def n_rows(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def true_scores(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=int)
        if labels.shape != (self.n_rows,):
            raise ValidationError("need one label per row")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValidationError("label index out of range")
        return self.scores[np.arange(self.n_rows), labels]


@dataclass(frozen=True, eq=False)
class AuxiliaryPair:
    lower: WeightedEmpirical
    upper: WeightedEmpirical
    kind: str
    dominance_verified: bool

    def __post_init__(self):
        if self.kind not in (MIN_MAX, F_U, CUSTOM):
            raise ValidationError(f"unknown pair kind {self.kind!r}")
        if self.kind == MIN_MAX and not self.dominance_verified:
            raise ValidationError("a min/max pair must satisfy dominance")


def min_max_pair(scores: ScoreMatrix) -> AuxiliaryPair:
    """Row minima as the dominated distribution, row maxima as the dominating one."""
    if scores.n_classes < 2:
        raise ValidationError("need at least two classes")
    lower = from_scores(scores.scores.min(axis=1))
    upper = from_scores(scores.scores.max(axis=1))
    return AuxiliaryPair(lower, upper, MIN_MAX, dominates(upper, lower, 0.0))


def draw_classes(probs: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row, one class drawn from the row's probabilities and one drawn uniformly."""
    rng = np.random.default_rng(seed)
    m, k = probs.shape
    cum = np.cumsum(probs, axis=1)
    u = rng.random(m) * cum[:, -1]
    model_cls = np.minimum((cum <= u[:, None]).sum(axis=1), k - 1)
    uniform_cls = rng.integers(0, k, size=m)
    return model_cls, uniform_cls


def f_u_pair(scores: ScoreMatrix, seed: int) -> AuxiliaryPair:
    """One score per row at a class drawn from the model (lower) or uniformly (upper).

    Dominance of the uniform draw over the model draw is typical but not
    guaranteed; it is checked and recorded, never enforced.
    """
    if scores.probs is None:
        raise ValidationError("f/U pair needs model probabilities")
    model_cls, uniform_cls = draw_classes(scores.probs, seed)
    rows = np.arange(scores.n_rows)
    lower = from_scores(scores.scores[rows, model_cls])
    upper = from_scores(scores.scores[rows, uniform_cls])
    return AuxiliaryPair(lower, upper, F_U, dominates(upper, lower))


def custom_pair(lower: WeightedEmpirical, upper: WeightedEmpirical) -> AuxiliaryPair:
    return AuxiliaryPair(lower, upper, CUSTOM, dominates(upper, lower))


def labeled_empirical(scores) -> WeightedEmpirical:
    return from_scores(scores)
