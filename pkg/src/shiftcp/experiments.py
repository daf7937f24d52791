"""Data generation and the synthetic covariate-shift regression harness.

The regression target is discretized into equally spaced bins so that the
classification machinery (score matrices, auxiliary pairs, prediction sets)
applies unchanged. Test-domain data come from exponentially tilting the
Gaussian inputs, which gives an analytic likelihood ratio for the
``true-lr`` baseline.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, logsumexp

from . import baselines as bl
from . import empirical as emp
from .auxiliary import ScoreMatrix, f_u_pair, min_max_pair
from .bounds import W1
from .conformal import evaluate
from .errors import ValidationError
from .reweight import OptimizerConfig, learn_weights

TRUE_INTERCEPT = 210.0
TRUE_SLOPES = (27.4, 13.7, 13.7, 13.7)
LINEAR = "linear"
RELU_FEATURES = "relu_features"
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 1000
    n_cal: int = 300
    n_adapt: int = 300
    n_test: int = 1000
    bins: int = 50
    tilt: tuple = bl.SYNTH_TILT
    noise_sigma: float = 1.0
    seed: int = 42
    pool_factor: int = 20
    predictor: str = RELU_FEATURES
    hidden: int = 256
    ridge: float = 1.0

    def __post_init__(self):
        if min(self.n_train, self.n_cal, self.n_adapt, self.n_test) < 1:
            raise ValidationError("sample counts must be at least 1")
        if self.bins < 2:
            raise ValidationError("need at least two bins")
        if len(self.tilt) != 4:
            raise ValidationError("tilt must have four components")
        if self.pool_factor < 1 or self.noise_sigma < 0:
            raise ValidationError("pool_factor must be >= 1 and noise_sigma >= 0")
        if self.predictor not in (LINEAR, RELU_FEATURES):
            raise ValidationError(f"unknown predictor {self.predictor!r}")
        object.__setattr__(self, "tilt", tuple(float(t) for t in self.tilt))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tilt"] = list(self.tilt)
        return d


@dataclass(frozen=True, eq=False)
class Split:
    X: np.ndarray
    Y: np.ndarray


@dataclass(frozen=True, eq=False)
class SynthData:
    train_P: Split
    cal_P: Split
    adapt_Q: Split
    test_Q: Split


def _response(rng, X, noise_sigma):
    return TRUE_INTERCEPT + X @ np.asarray(TRUE_SLOPES) + noise_sigma * rng.standard_normal(X.shape[0])


def _draw_p(rng, n, noise_sigma) -> Split:
    X = rng.standard_normal((n, 4))
    return Split(X, _response(rng, X, noise_sigma))


def _draw_q(rng, n, cfg: SynthConfig) -> Split:
    pool = _draw_p(rng, cfg.pool_factor * n, cfg.noise_sigma)
    logit = pool.X @ np.asarray(cfg.tilt)
    w = np.exp(logit - logit.max())
    idx = rng.choice(w.size, size=n, replace=True, p=w / w.sum())
    return Split(pool.X[idx], pool.Y[idx])


def generate_synth(cfg: SynthConfig) -> SynthData:
    """Train/calibration splits from P; adaptation/test splits from the tilted Q."""
    rng = np.random.default_rng(cfg.seed)
    return SynthData(
        train_P=_draw_p(rng, cfg.n_train, cfg.noise_sigma),
        cal_P=_draw_p(rng, cfg.n_cal, cfg.noise_sigma),
        adapt_Q=_draw_q(rng, cfg.n_adapt, cfg),
        test_Q=_draw_q(rng, cfg.n_test, cfg),
    )


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    coef: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.coef[0] + X @ self.coef[1:]


def fit_linear_gaussian(train: Split) -> LinearGaussianModel:
    """OLS with intercept; sigma is the residual sd with denominator n - 5."""
    X, Y = np.asarray(train.X, dtype=float), np.asarray(train.Y, dtype=float)
    n = X.shape[0]
    if n < 5:
        raise ValidationError("need at least five training rows")
    A = np.column_stack([np.ones(n), X])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ coef
    sigma = math.sqrt(float(resid @ resid) / (n - 5)) if n > 5 else 0.0
    return LinearGaussianModel(coef, max(sigma, SIGMA_FLOOR))


@dataclass(frozen=True, eq=False)
class ReluFeatureModel:
    """One hidden ReLU layer with fixed random weights and a ridge readout."""

    W: np.ndarray
    b: np.ndarray
    coef: np.ndarray
    sigma: float

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([np.ones(X.shape[0]), np.maximum(X @ self.W + self.b, 0.0)])

    def predict(self, X) -> np.ndarray:
        return self.features(X) @ self.coef


def fit_relu_features(train: Split, hidden: int = 256, ridge: float = 1.0, seed: int = 0) -> ReluFeatureModel:
    rng = np.random.default_rng(seed)
    d = train.X.shape[1]
    W = rng.standard_normal((d, hidden))
    b = rng.standard_normal(hidden)
    model = ReluFeatureModel(W, b, np.zeros(hidden + 1), 1.0)
    A = model.features(train.X)
    coef = np.linalg.solve(A.T @ A + ridge * np.eye(hidden + 1), A.T @ train.Y)
    resid = train.Y - A @ coef
    n = train.X.shape[0]
    sigma = math.sqrt(float(resid @ resid) / max(n - 5, 1))
    return ReluFeatureModel(W, b, coef, max(sigma, SIGMA_FLOOR))


def fit_predictor(train: Split, cfg: SynthConfig, seed: int):
    if cfg.predictor == LINEAR:
        return fit_linear_gaussian(train)
    return fit_relu_features(train, cfg.hidden, cfg.ridge, seed)


def bin_edges(train_y, sigma: float, bins: int) -> np.ndarray:
    """Equally spaced edges over the training range widened by 3 sigma per side."""
    y = np.asarray(train_y, dtype=float)
    return np.linspace(y.min() - 3.0 * sigma, y.max() + 3.0 * sigma, bins + 1)


def bin_labels(Y, edges) -> np.ndarray:
    return np.clip(np.searchsorted(edges, Y, side="right") - 1, 0, edges.size - 2)


def _log_interval_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo <= hi, evaluated on the far-tail side."""
    flip = (lo + hi) > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la, lb = log_ndtr(a), log_ndtr(b)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def bin_scores(model, X_rows, edges, Y=None):
    """Gaussian predictive mass per bin as class probabilities.

    Returns the ScoreMatrix and, when ``Y`` is given, the bin index of each
    target (out-of-range targets fall in the boundary bins).
    """
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or e.size < 3 or np.any(np.diff(e) <= 0):
        raise ValidationError("bin edges must be strictly increasing with at least two bins")
    mu = model.predict(X_rows)
    z = (e[None, :] - mu[:, None]) / model.sigma
    logm = _log_interval_mass(z[:, :-1], z[:, 1:])
    logp = logm - logsumexp(logm, axis=1, keepdims=True)
    probs = np.exp(logp)
    probs /= probs.sum(axis=1, keepdims=True)
    matrix = ScoreMatrix(np.clip(1.0 - probs, 0.0, 1.0), probs)
    if Y is None:
        return matrix, None
    return matrix, bin_labels(np.asarray(Y, dtype=float), e)


LABEL_SHIFT_MIN_FRACTION = 1.0 / 3.0


def label_shift_resample(labels, scores: ScoreMatrix | None, gamma: float, seed: int) -> np.ndarray:
    """Indices of a without-replacement subsample whose label marginal follows Dir(gamma * freq).

    The sample is scaled as large as the rarest targeted class allows; if that
    leaves fewer than a third of the rows, the scale grows and the classes that
    run out are taken whole. Indices are returned sorted.
    """
    y = np.asarray(labels, dtype=int).ravel()
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    if y.size == 0:
        raise ValidationError("labels must be nonempty")
    if scores is not None and scores.n_rows != y.size:
        raise ValidationError("labels and score rows differ in length")
    if y.min() < 0:
        raise ValidationError("labels must be nonnegative")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    target = rng.dirichlet(gamma * counts / y.size)

    def sizes(scale):
        return np.minimum(counts, np.round(scale * target)).astype(int)

    with np.errstate(divide="ignore"):
        caps = np.where(target > 0, counts / target, np.inf)
    scale = float(caps.min())
    floor = math.ceil(y.size * LABEL_SHIFT_MIN_FRACTION)
    if sizes(scale).sum() < floor:
        lo, hi = scale, float(np.max(caps[np.isfinite(caps)]))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if sizes(mid).sum() >= floor:
                hi = mid
            else:
                lo = mid
        scale = hi
    n_k = sizes(scale)
    picked = [
        rng.choice(np.flatnonzero(y == c), size=k, replace=False) for c, k in zip(classes, n_k) if k > 0
    ]
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=int)


def default_synth_optimizer(steps: int = 1000) -> OptimizerConfig:
    return OptimizerConfig(steps=steps, learning_rate=0.1, flavor=W1)


@dataclass(frozen=True)
class _SimTask:
    cfg: SynthConfig
    methods: tuple
    alpha: float
    sim: int
    seed: int
    opt: OptimizerConfig


def _run_one(task: _SimTask) -> list[dict]:
    sim_seed = task.seed + task.sim
    cfg = replace(task.cfg, seed=sim_seed)
    data = generate_synth(cfg)
    model = fit_predictor(data.train_P, cfg, sim_seed)
    edges = bin_edges(data.train_P.Y, model.sigma, cfg.bins)
    cal_m, cal_y = bin_scores(model, data.cal_P.X, edges, data.cal_P.Y)
    ad_m, ad_y = bin_scores(model, data.adapt_Q.X, edges, data.adapt_Q.Y)
    te_m, te_y = bin_scores(model, data.test_Q.X, edges, data.test_Q.Y)
    cal_scores = cal_m.true_scores(cal_y)
    records = []
    for method in task.methods:
        trace = None
        thr_fn = None
        if method == bl.UNCORRECTED:
            cal = bl.uncorrected(cal_scores)
        elif method == bl.OPTIMAL:
            cal = bl.oracle(ad_m.true_scores(ad_y))
        elif method == bl.TRUE_LR:
            cal = emp.from_scores(cal_scores, bl.true_lr_weights(data.cal_P.X, cfg.tilt))
        elif method == bl.ECP:
            cal = bl.uncorrected(cal_scores)
            thr_fn = lambda a, c=cal: bl.ecp_threshold(c, te_m, a)  # noqa: E731
        elif method in (bl.OT_MINMAX, bl.OT_FU):
            pair = min_max_pair(ad_m) if method == bl.OT_MINMAX else f_u_pair(ad_m, sim_seed)
            weights, trace = learn_weights(cal_scores, pair, task.opt)
            cal = emp.from_scores(cal_scores, weights.weights)
        else:
            raise ValidationError(f"unknown method {method!r}")
        rep = evaluate(cal, te_m, te_y, [task.alpha], method=method, threshold_fn=thr_fn)
        rec = {
            "sim": task.sim,
            "method": method,
            "alpha": task.alpha,
            "coverage": rep.coverage[0],
            "mean_size": rep.mean_size[0],
        }
        if trace is not None and trace.size:
            rec["trace"] = trace.tolist()
        records.append(rec)
    return records


def thread_count() -> int:
    env = os.environ.get("SHIFTCP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError("SHIFTCP_THREADS must be an integer") from exc
    return os.cpu_count() or 1


def run_synth_experiment(
    cfg: SynthConfig,
    methods,
    alpha: float,
    n_sims: int,
    seed: int,
    opt: OptimizerConfig | None = None,
    threads: int | None = None,
) -> list[dict]:
    """Per-simulation coverage and mean set size for each method.

    Simulation ``i`` is driven entirely by ``seed + i``, so the records do not
    depend on the number of worker processes.
    """
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    methods = tuple(methods)
    unknown = [m for m in methods if m not in bl.METHODS]
    if unknown or not methods:
        raise ValidationError(f"unknown or empty methods: {unknown}")
    opt = opt or default_synth_optimizer()
    tasks = [_SimTask(cfg, methods, float(alpha), i, seed, opt) for i in range(n_sims)]
    workers = min(threads or thread_count(), n_sims)
    if workers <= 1:
        chunks = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_one, tasks))
    return [r for chunk in chunks for r in chunk]


def summarize(records: list[dict]) -> dict:
    """Mean and sd of coverage and set size per method, in first-seen order."""
    out = {}
    for method in dict.fromkeys(r["method"] for r in records):
        cov = np.array([r["coverage"] for r in records if r["method"] == method])
        size = np.array([r["mean_size"] for r in records if r["method"] == method])
        out[method] = {
            "n_sims": int(cov.size),
            "coverage_mean": float(cov.mean()),
            "coverage_sd": float(cov.std(ddof=1)) if cov.size > 1 else 0.0,
            "mean_size_mean": float(size.mean()),
            "mean_size_sd": float(size.std(ddof=1)) if size.size > 1 else 0.0,
        }
    return out


# ---------------------------------------------------------------------------
# classification fixture with covariate and label shift


@dataclass(frozen=True)
class ClassificationShiftConfig:
    n_classes: int = 100
    dim: int = 16
    n_cal: int = 500
    n_adapt: int = 500
    n_test: int = 500
    separation: float = 1.6
    noise: float = 1.0
    corruption: float = 1.0
    gamma: float = 10.0
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ClassificationShift:
    cal: ScoreMatrix
    cal_labels: np.ndarray
    adapt: ScoreMatrix
    adapt_labels: np.ndarray
    test: ScoreMatrix
    test_labels: np.ndarray
    config: dict = field(default_factory=dict)


def _posterior(X, protos, noise):
    d2 = ((X[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    logit = -0.5 * d2 / noise**2
    logit -= logit.max(axis=1, keepdims=True)
    p = np.exp(logit)
    return p / p.sum(axis=1, keepdims=True)


def make_classification_shift(cfg: ClassificationShiftConfig = ClassificationShiftConfig()) -> ClassificationShift:
    """Gaussian-prototype classes scored by their Bayes posterior under the clean noise level.

    Test-domain rows get extra isotropic input noise (a covariate shift the
    model ignores) and are then label-shift resampled with Dir(gamma * freq).
    """
    rng = np.random.default_rng(cfg.seed)
    protos = cfg.separation * rng.standard_normal((cfg.n_classes, cfg.dim))

    def draw(n, extra):
        y = rng.integers(0, cfg.n_classes, size=n)
        sd = math.sqrt(cfg.noise**2 + extra**2)
        X = protos[y] + sd * rng.standard_normal((n, cfg.dim))
        return ScoreMatrix.from_probs(_posterior(X, protos, cfg.noise)), y

    def draw_shifted(n):
        # oversample so the label-shift subsample still has about n rows
        m, y = draw(3 * n, cfg.corruption)
        idx = label_shift_resample(y, m, cfg.gamma, int(rng.integers(2**31)))[:n]
        return ScoreMatrix(m.scores[idx], m.probs[idx]), y[idx]

    cal, cal_y = draw(cfg.n_cal, 0.0)
    adapt, adapt_y = draw_shifted(cfg.n_adapt)
    test, test_y = draw_shifted(cfg.n_test)
    return ClassificationShift(cal, cal_y, adapt, adapt_y, test, test_y, cfg.to_dict())
