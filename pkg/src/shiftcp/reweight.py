"""Learning calibration weights that minimize the unlabeled coverage-gap bound.

Weights live on the simplex through a softmax of free log-weights. The
calibration scores are sorted once; afterwards the weighted CDF at any point
is a prefix sum of the sorted weights, so the bound and its gradient are
cheap closed-form expressions that are re-evaluated at every Adam step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import empirical as emp
from .auxiliary import AuxiliaryPair
from .bounds import ESTIMATORS, EXPECTATION, FLAVORS, GRID, W1, WEIGHTED_CDF, SegmentTable
from .density import (
    BANDWIDTH_FLOOR,
    DEFAULT_GRID_SIZE,
    grid_points,
    reflected_kernel_matrix,
    reflected_kernel_matrix_dh,
    silverman_bandwidth,
)
from .errors import ValidationError


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.array(self.log_weights, dtype=float)
        if lw.ndim != 1 or lw.size == 0 or not np.all(np.isfinite(lw)):
            raise ValidationError("log-weights must be a finite nonempty vector")
        lw.flags.writeable = False
        object.__setattr__(self, "log_weights", lw)
        w = softmax(lw)
        w.flags.writeable = False
        object.__setattr__(self, "_weights", w)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @classmethod
    def uniform(cls, n: int) -> "SimplexWeights":
        return cls(np.zeros(n))


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    flavor: str = WEIGHTED_CDF
    estimator: str = GRID
    grid_size: int = DEFAULT_GRID_SIZE
    bandwidth: float | None = None
    refit_bandwidth: bool = False
    seed: int = 42
    record_trace: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be at least 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("betas must lie in (0, 1)")
        if self.flavor not in FLAVORS or self.estimator not in ESTIMATORS:
            raise ValidationError("unknown flavor or estimator")
        if self.grid_size < 2:
            raise ValidationError("grid_size must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


def _suffix_sums(counts: np.ndarray, coef: np.ndarray, n: int) -> np.ndarray:
    """out[r] = sum of coef[j] over j with counts[j] > r, for r in 0..n-1."""
    acc = np.bincount(counts, weights=coef, minlength=n + 1)
    return np.cumsum(acc[::-1])[::-1][1:]


class BoundObjective:
    """Unlabeled bound as a function of log-weights, with its exact gradient.

    The bandwidth is fixed at the Silverman value for uniform weights unless
    ``cfg.bandwidth`` is set; with ``cfg.refit_bandwidth`` it follows the
    weights and the gradient includes the bandwidth path (zero on the floor).
    Non-smooth points use subgradients: sign(0) = 0 for the absolute values
    and the first grid argmax for the maximum density.
    """

    def __init__(self, cal_scores, pair: AuxiliaryPair, cfg: OptimizerConfig):
        s = np.asarray(cal_scores, dtype=float).ravel()
        if s.size == 0 or s.min() < 0.0 or s.max() > 1.0:
            raise ValidationError("calibration scores must be nonempty and lie in [0, 1]")
        self.cfg = cfg
        self.n = s.size
        self.order = np.argsort(s, kind="stable")
        self.sorted = s[self.order]
        self.grid = grid_points(cfg.grid_size)
        self.table = SegmentTable.build(self.sorted, (pair.upper, pair.lower), cfg.grid_size)
        self.mean_gap = emp.mean(pair.upper) - emp.mean(pair.lower)
        if cfg.bandwidth is not None:
            self.fixed_h = float(cfg.bandwidth)
        else:
            self.fixed_h = silverman_bandwidth(self.sorted, np.full(self.n, 1.0 / self.n))
        self.fixed_kmat = reflected_kernel_matrix(self.grid, self.sorted, self.fixed_h)
        # calibration-point CDF lookups for the expectation estimator
        self.self_count = np.searchsorted(self.sorted, self.sorted, side="right")
        self.up_at_cal = emp.cdf_at(pair.upper, self.sorted)
        self.low_at_cal = emp.cdf_at(pair.lower, self.sorted)

    def _check(self, log_weights) -> np.ndarray:
        lw = np.asarray(log_weights, dtype=float)
        if lw.shape != (self.n,):
            raise ValidationError("need one log-weight per calibration score")
        return lw[self.order]

    def _kernel(self, w):
        """Kernel matrix at the current bandwidth, plus the bandwidth gradient pieces."""
        if not self.cfg.refit_bandwidth:
            return self.fixed_kmat, None, None
        s = self.sorted
        mu = np.dot(w, s)
        var = max(float(np.dot(w, s * s) - mu * mu), 0.0)
        sq = float(np.sum(w * w))
        raw_h = 1.06 * np.sqrt(var) * sq**0.2
        if raw_h <= BANDWIDTH_FLOOR or var <= 0.0:
            return reflected_kernel_matrix(self.grid, s, BANDWIDTH_FLOOR), None, None
        sigma = np.sqrt(var)
        dh = 1.06 * ((s * s - 2.0 * mu * s) / (2.0 * sigma) * sq**0.2 + sigma * 0.2 * sq**-0.8 * 2.0 * w)
        kmat = reflected_kernel_matrix(self.grid, s, raw_h)
        return kmat, reflected_kernel_matrix_dh(self.grid, s, raw_h), dh

    def bandwidth(self, log_weights) -> float:
        if not self.cfg.refit_bandwidth:
            return self.fixed_h
        w = softmax(self._check(log_weights))
        return silverman_bandwidth(self.sorted, w)

    def value(self, log_weights) -> float:
        return self._evaluate(self._check(log_weights), need_grad=False)[0]

    def value_and_grad(self, log_weights):
        val, g_sorted = self._evaluate(self._check(log_weights), need_grad=True)
        grad = np.empty(self.n)
        grad[self.order] = g_sorted
        return val, grad

    def _evaluate(self, theta: np.ndarray, need_grad: bool):
        w = softmax(theta)
        cfg = self.cfg
        tab = self.table
        if cfg.estimator == EXPECTATION and cfg.flavor == WEIGHTED_CDF:
            cum = np.concatenate(([0.0], np.cumsum(w)))
            cum[-1] = 1.0
            fp = cum[self.self_count]
            a = fp - self.up_at_cal
            b = fp - self.low_at_cal
            integrand = 0.5 * (np.abs(a) + np.abs(b) + (self.low_at_cal - self.up_at_cal))
            val = float(np.dot(w, integrand))
            if not need_grad:
                return val, None
            coef = 0.5 * w * (np.sign(a) + np.sign(b))
            g_w = integrand + _suffix_sums(self.self_count, coef, self.n)
            return val, w * (g_w - np.dot(w, g_w))

        kmat, dkmat, dh = self._kernel(w)
        dens = kmat @ w
        fp = tab.p_cdf(w)
        a = fp - tab.others[0]
        b = fp - tab.others[1]
        if cfg.flavor == W1:
            k = int(np.argmax(dens))
            peak = dens[k]
            transport = float(np.sum(tab.length * (np.abs(a) + np.abs(b)))) + self.mean_gap
            val = 0.5 * peak * transport
            if not need_grad:
                return val, None
            g_w = 0.5 * transport * kmat[k]
            if dh is not None:
                g_w = g_w + 0.5 * transport * float(dkmat[k] @ w) * dh
            coef = 0.5 * peak * tab.length * (np.sign(a) + np.sign(b))
        else:
            integrand = 0.5 * (np.abs(a) + np.abs(b) + (tab.others[1] - tab.others[0]))
            per_seg = tab.length * integrand
            val = float(np.sum(dens[tab.cell] * per_seg))
            if not need_grad:
                return val, None
            per_cell = np.bincount(tab.cell, weights=per_seg, minlength=cfg.grid_size)
            g_w = kmat.T @ per_cell
            if dh is not None:
                g_w = g_w + float(per_cell @ (dkmat @ w)) * dh
            coef = 0.5 * dens[tab.cell] * tab.length * (np.sign(a) + np.sign(b))
        g_w = g_w + _suffix_sums(tab.p_count, coef, self.n)
        return val, w * (g_w - np.dot(w, g_w))


def objective(w: SimplexWeights, cal_scores, pair: AuxiliaryPair, cfg: OptimizerConfig) -> float:
    return BoundObjective(cal_scores, pair, cfg).value(w.log_weights)


def gradient(w: SimplexWeights, cal_scores, pair: AuxiliaryPair, cfg: OptimizerConfig) -> np.ndarray:
    """Gradient of ``objective`` with respect to the log-weights."""
    return BoundObjective(cal_scores, pair, cfg).value_and_grad(w.log_weights)[1]


class Adam:
    def __init__(self, size: int, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def learn_weights(
    cal_scores,
    pair: AuxiliaryPair,
    cfg: OptimizerConfig = OptimizerConfig(),
    init: SimplexWeights | None = None,
) -> tuple[SimplexWeights, np.ndarray]:
    """Run Adam on all log-weights for ``cfg.steps`` full-batch updates.

    The returned trace holds the objective at the initial weights followed by
    its value after every update (``steps + 1`` entries), or is empty when
    ``cfg.record_trace`` is off.
    """
    problem = BoundObjective(cal_scores, pair, cfg)
    if problem.n < 2:
        raise ValidationError("need at least two calibration scores")
    theta = np.zeros(problem.n) if init is None else np.array(init.log_weights, dtype=float)
    if theta.shape != (problem.n,):
        raise ValidationError("initial weights do not match the calibration scores")
    opt = Adam(problem.n, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon_adam)
    trace = []
    for _ in range(cfg.steps):
        val, grad = problem.value_and_grad(theta)
        if cfg.record_trace:
            trace.append(val)
        theta = opt.step(theta, grad)
    if cfg.record_trace:
        trace.append(problem.value(theta))
    return SimplexWeights(theta), np.asarray(trace)
