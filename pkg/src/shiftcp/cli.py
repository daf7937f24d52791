"""Command-line interface: ``shiftcp {bound,learn,evaluate,synth,shift-label,fixture}``.

Exit status is 0 on success, 2 on invalid input and 1 on any other error.
Every output carries the fully resolved configuration that produced it.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines as bl
from . import bounds as bd
from . import empirical as emp
from . import experiments as ex
from . import fileio as fio
from .auxiliary import ScoreMatrix, f_u_pair, min_max_pair
from .conformal import evaluate
from .density import fit_kde
from .errors import ValidationError
from .reweight import OptimizerConfig, learn_weights

FLAVOR_NAMES = {"cdf": bd.WEIGHTED_CDF, "w1": bd.W1}
PAIR_NAMES = ("minmax", "fu")
DEFAULT_SEED = 42


def _alphas(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty alpha list")
    return vals


def _methods(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in bl.METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(bl.METHODS)}")
    return names


def _cal_scores(path) -> np.ndarray:
    matrix, labels = fio.read_score_file(path).labeled()
    return matrix.true_scores(labels)


def _make_pair(test: ScoreMatrix, kind: str, seed: int):
    return min_max_pair(test) if kind == "minmax" else f_u_pair(test, seed)


def _file_config(args, *names) -> dict:
    return {n: str(getattr(args, n)) for n in names if getattr(args, n, None) is not None}


def cmd_bound(args) -> int:
    cal = _cal_scores(args.cal)
    test = fio.read_score_file(args.test)
    p = emp.from_scores(cal)
    kde = fit_kde(cal, bandwidth=args.bandwidth)
    flavor = FLAVOR_NAMES[args.flavor]
    if args.labeled:
        tm, tl = test.labeled()
        q = emp.from_scores(tm.true_scores(tl))
        report = bd.labeled_bound(p, q, kde, flavor, args.estimator, args.grid_size)
        used = int(tl.size)
    else:
        pair = _make_pair(test.matrix, args.pair, args.seed)
        report = bd.unlabeled_bound(p, pair, kde, flavor, args.estimator, args.grid_size)
        used = test.matrix.n_rows
    if args.dkw is not None:
        report = bd.dkw_correct(report, cal.size, used, args.dkw)
    config = {
        "command": "bound",
        **_file_config(args, "cal", "test"),
        "labeled": args.labeled,
        "flavor": flavor,
        "estimator": args.estimator,
        "pair": None if args.labeled else args.pair,
        "dkw": args.dkw,
        "grid_size": args.grid_size,
        "bandwidth": kde.bandwidth,
        "seed": args.seed,
        "n_calibration": int(cal.size),
        "n_test_used": used,
        "n_test_rows": test.matrix.n_rows,
        "version": __version__,
    }
    fio.write_json(args.out, {"report": report.to_dict(), "config": config}, fio.BOUND_SCHEMA)
    return 0


def cmd_learn(args) -> int:
    cal = _cal_scores(args.cal)
    test = fio.read_score_file(args.test)
    pair = _make_pair(test.matrix, args.pair, args.seed)
    cfg = OptimizerConfig(
        steps=args.steps,
        learning_rate=args.lr,
        flavor=FLAVOR_NAMES[args.flavor],
        estimator=args.estimator,
        grid_size=args.grid_size,
        bandwidth=args.bandwidth,
        refit_bandwidth=args.refit_bandwidth,
        seed=args.seed,
    )
    weights, trace = learn_weights(cal, pair, cfg)
    config = {
        "command": "learn",
        **_file_config(args, "cal", "test"),
        "pair": args.pair,
        "pair_dominance_verified": pair.dominance_verified,
        "optimizer": cfg.to_dict(),
        "n_calibration": int(cal.size),
        "version": __version__,
    }
    out = {
        "weights": weights.weights,
        "log_weights": weights.log_weights,
        "objective_trace": trace,
        "config": config,
    }
    fio.write_json(args.out, out, fio.WEIGHTS_SCHEMA)
    return 0


def cmd_evaluate(args) -> int:
    cal_scores = _cal_scores(args.cal)
    test_m, test_y = fio.read_score_file(args.test).labeled()
    method = args.method
    weights = None
    if method in bl.WEIGHTED_METHODS:
        if args.weights is None:
            raise ValidationError(f"method {method!r} needs --weights")
        weights = np.asarray(fio.read_json(args.weights, fio.WEIGHTS_SCHEMA)["weights"], dtype=float)
        if weights.size != cal_scores.size:
            raise ValidationError(
                f"weights file has {weights.size} entries but calibration has {cal_scores.size} labeled rows"
            )
    elif args.weights is not None:
        raise ValidationError(f"method {method!r} does not take --weights")
    cal = emp.from_scores(cal_scores, weights)
    thr_fn = None
    if method == bl.ECP:
        thr_fn = lambda a: bl.ecp_threshold(cal, test_m, a, args.convention)  # noqa: E731
    report = evaluate(cal, test_m, test_y, args.alphas, args.convention, method, thr_fn)
    Path(args.out).write_text(report.to_csv())
    config = {
        "command": "evaluate",
        **_file_config(args, "cal", "test", "weights"),
        "method": method,
        "alphas": args.alphas,
        "convention": report.convention,
        "n_calibration": int(cal_scores.size),
        "n_test_used": int(test_y.size),
        "version": __version__,
    }
    fio.write_json(fio.sidecar_path(args.out), {"report": report.to_dict(), "config": config}, fio.COVERAGE_SCHEMA)
    return 0


SYNTH_COLUMNS = ("sim", "method", "alpha", "coverage", "mean_size")


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ex.SynthConfig(seed=args.seed, predictor=args.predictor)
    opt = OptimizerConfig(
        steps=args.steps, learning_rate=args.lr, flavor=FLAVOR_NAMES[args.flavor], seed=args.seed
    )
    records = ex.run_synth_experiment(cfg, args.methods, args.alpha, args.sims, args.seed, opt, args.threads)
    fio.write_rows_csv(out / "synth_records.csv", SYNTH_COLUMNS, records)
    descent = {}
    for m in args.methods:
        traces = [r["trace"] for r in records if r["method"] == m and "trace" in r]
        if traces:
            ok = sum(np.mean(t[-10:]) <= np.mean(t[:10]) for t in traces)
            descent[m] = {"instances": len(traces), "descending": int(ok)}
    config = {
        "command": "synth",
        "sims": args.sims,
        "alpha": args.alpha,
        "methods": args.methods,
        "seed": args.seed,
        "synth": cfg.to_dict(),
        "optimizer": opt.to_dict(),
        "version": __version__,
    }
    summary = {"summary": ex.summarize(records), "descent": descent, "config": config}
    fio.write_json(out / "synth_summary.json", summary, fio.SYNTH_SCHEMA)
    return 0


def cmd_shift_label(args) -> int:
    src = fio.read_score_file(args.inp)
    if not src.labeled_mask.all():
        raise ValidationError("label-shift resampling needs every row labeled")
    idx = ex.label_shift_resample(src.labels, src.matrix, args.gamma, args.seed)
    probs = None if src.matrix.probs is None else src.matrix.probs[idx]
    sub = ScoreMatrix(src.matrix.scores[idx], probs)
    fio.save_score_matrix(args.out, sub, src.labels[idx], [src.ids[i] for i in idx])
    config = {
        "command": "shift-label",
        "in": str(args.inp),
        "gamma": args.gamma,
        "seed": args.seed,
        "n_in": src.matrix.n_rows,
        "n_out": int(idx.size),
        "version": __version__,
    }
    fio.write_json(fio.sidecar_path(args.out), {"config": config}, fio.CONFIG_SCHEMA)
    return 0


def cmd_fixture(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ex.ClassificationShiftConfig(seed=args.seed)
    data = ex.make_classification_shift(cfg)
    for name, m, y in (
        ("cal", data.cal, data.cal_labels),
        ("adapt", data.adapt, np.full(data.adapt.n_rows, fio.UNLABELED)),
        ("test", data.test, data.test_labels),
    ):
        fio.save_score_matrix(out / f"{name}.csv", m, y, precision=args.precision)
    fio.write_json(out / "fixture.json", {"config": {**cfg.to_dict(), "precision": args.precision}}, fio.CONFIG_SCHEMA)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftcp", description="Conformal calibration under distribution shift")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--out", required=True)

    b = sub.add_parser("bound", help="coverage-gap bound between calibration and test scores")
    b.add_argument("--cal", required=True)
    b.add_argument("--test", required=True)
    b.add_argument("--labeled", action="store_true", help="use the labeled test rows directly")
    b.add_argument("--flavor", choices=FLAVOR_NAMES, default="cdf")
    b.add_argument("--estimator", choices=bd.ESTIMATORS, default=bd.EXPECTATION)
    b.add_argument("--pair", choices=PAIR_NAMES, default="minmax")
    b.add_argument("--dkw", type=float, default=None, metavar="D")
    b.add_argument("--grid-size", type=int, default=512)
    b.add_argument("--bandwidth", type=float, default=None)
    common(b)
    b.set_defaults(func=cmd_bound)

    lr = sub.add_parser("learn", help="learn calibration weights from unlabeled test scores")
    lr.add_argument("--cal", required=True)
    lr.add_argument("--test", required=True)
    lr.add_argument("--pair", choices=PAIR_NAMES, default="minmax")
    lr.add_argument("--flavor", choices=FLAVOR_NAMES, default="cdf")
    lr.add_argument("--estimator", choices=bd.ESTIMATORS, default=bd.GRID)
    lr.add_argument("--steps", type=int, default=1000)
    lr.add_argument("--lr", type=float, default=1e-3)
    lr.add_argument("--grid-size", type=int, default=512)
    lr.add_argument("--bandwidth", type=float, default=None)
    lr.add_argument("--refit-bandwidth", action="store_true")
    common(lr)
    lr.set_defaults(func=cmd_learn)

    ev = sub.add_parser("evaluate", help="coverage and set size on labeled test rows")
    ev.add_argument("--cal", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--weights", default=None)
    ev.add_argument("--alphas", type=_alphas, default=[0.1])
    ev.add_argument("--method", choices=bl.METHODS, default=bl.UNCORRECTED)
    ev.add_argument("--convention", choices=(emp.CONFORMAL, emp.PLAIN), default=None)
    common(ev)
    ev.set_defaults(func=cmd_evaluate)

    sy = sub.add_parser("synth", help="synthetic covariate-shift regression simulations")
    sy.add_argument("--sims", type=int, default=100)
    sy.add_argument("--alpha", type=float, default=0.1)
    sy.add_argument("--methods", type=_methods, default=list(bl.METHODS))
    sy.add_argument("--steps", type=int, default=1000)
    sy.add_argument("--lr", type=float, default=0.1)
    sy.add_argument("--flavor", choices=FLAVOR_NAMES, default="w1")
    sy.add_argument("--predictor", choices=(ex.RELU_FEATURES, ex.LINEAR), default=ex.RELU_FEATURES)
    sy.add_argument(
        "--threads", type=int, default=None, help="worker processes (default: $SHIFTCP_THREADS or all cores)"
    )
    common(sy)
    sy.set_defaults(func=cmd_synth)

    sl = sub.add_parser("shift-label", help="Dirichlet label-shift subsample of a labeled score file")
    sl.add_argument("--in", dest="inp", required=True)
    sl.add_argument("--gamma", type=float, default=10.0)
    common(sl)
    sl.set_defaults(func=cmd_shift_label)

    fx = sub.add_parser("fixture", help="write the synthetic 100-class shifted score fixture")
    fx.add_argument("--precision", type=int, default=None, help="significant digits (default: exact)")
    common(fx)
    fx.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"shiftcp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
