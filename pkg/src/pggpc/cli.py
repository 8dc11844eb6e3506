"""Command-line entry point for reproducible experiments.

Subcommands
-----------
train        fit a model, write checkpoint.json and trace.csv
predict      score new inputs from a checkpoint, write predictions.csv
evaluate     error/NLL of a checkpoint on labeled data, write metrics.csv
cv           k-fold cross-validated benchmarking, write cv.csv
gibbs-check  full-GP VI vs exact Gibbs agreement, write gibbs_vi.csv
sweep-m      CV error/time across a grid of inducing-point counts

All options take documented defaults matching the benchmarking protocol
(m=100, batch=100, adaptive rate, parameter-convergence threshold 1e-4 or
held-out threshold 1e-3 with window 5).  An optional ``--config`` file of
``key=value`` lines overrides the defaults, and explicit flags override the
file.  Every command is deterministic under a fixed ``--seed`` (in
single-threaded mode), and every CSV starts with a schema-version comment.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys

import numpy as np

from .data import canonical_order, kfold, load, load_features, standardize
from .gibbs import compare_to_vi, gibbs_run
from .inference import TrainConfig, fit
from .kernel import KernelParams
from .model import load_checkpoint, save_checkpoint
from .prediction import class_prob, evaluate, latent_predict

_BOOL_OPTS = {"standardize", "canonical-sort", "parallel", "trace-train-error", "unlabeled"}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, schema, header, rows):
    with open(path, "w") as fh:
        fh.write(f"# schema={schema}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_lr(text):
    if text == "adaptive" or text == "decay":
        return text, 0.1
    if text.startswith("fixed:"):
        value = float(text.split(":", 1)[1])
        if not 0.0 < value <= 1.0:
            raise argparse.ArgumentTypeError("fixed learning rate must be in (0, 1]")
        return "fixed", value
    raise argparse.ArgumentTypeError(
        f"invalid --lr {text!r} (expected adaptive, decay, or fixed:<value>)"
    )


def _parse_m_grid(text):
    try:
        grid = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid --m-grid {text!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("empty --m-grid")
    return grid


def _infer_format(path, explicit):
    if explicit:
        return explicit
    return "csv" if path.lower().endswith(".csv") else "libsvm"


def _add_data_opts(p, labeled=True):
    p.add_argument("--data", required=True, help="input dataset path")
    p.add_argument(
        "--format", choices=("libsvm", "csv"), default=None,
        help="input format (default: by extension, .csv means csv)",
    )
    p.add_argument("--label-col", type=int, default=0, help="CSV label column (default 0)")
    p.add_argument(
        "--n-features", type=int, default=None,
        help="force feature count for libsvm input (default: inferred)",
    )
    p.add_argument(
        "--canonical-sort", action=argparse.BooleanOptionalAction, default=False,
        help="sort records lexicographically before splitting (order-invariant folds)",
    )


def _add_common_opts(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--quad-order", type=int, default=20, help="Gauss-Hermite nodes (default 20)")
    p.add_argument("--config", default=None, help="key=value file of option defaults")


def _add_train_opts(p):
    p.add_argument("--m", type=int, default=100, help="inducing points (default 100)")
    p.add_argument("--batch", type=int, default=100, help="mini-batch size (default 100)")
    p.add_argument("--max-iters", type=int, default=1000, help="iteration cap (default 1000)")
    p.add_argument(
        "--conv", choices=("params", "heldout"), default="params",
        help="convergence criterion (default params: window-5 average of the "
        "relative natural-parameter change under 1e-4; heldout: window-5 "
        "average of the relative held-out NLL change under 1e-3)",
    )
    p.add_argument(
        "--lr", type=_parse_lr, default=("adaptive", 0.1), metavar="MODE",
        help="learning rate: adaptive, decay, or fixed:<value> (default adaptive)",
    )
    p.add_argument(
        "--hyper-every", type=int, default=10,
        help="hyperparameter Adam step every N iterations, 0 disables (default 10)",
    )
    p.add_argument("--adam-lr", type=float, default=0.02, help="Adam rate (default 0.02)")
    p.add_argument(
        "--heldout-frac", type=float, default=0.1,
        help="held-out fraction for --conv heldout (default 0.1)",
    )
    p.add_argument(
        "--standardize", action=argparse.BooleanOptionalAction, default=True,
        help="standardize features on the training split (default on)",
    )
    p.add_argument("--lengthscale", type=float, default=None,
                   help="initial lengthscale (default sqrt(d))")
    p.add_argument("--amplitude", type=float, default=None, help="initial amplitude (default 1)")
    p.add_argument("--jitter", type=float, default=None, help="diagonal jitter (default 1e-6)")
    p.add_argument(
        "--trace-train-error", action=argparse.BooleanOptionalAction, default=False,
        help="append a train_error column to the trace (default off)",
    )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pggpc",
        description="Sparse variational GP classification with Polya-Gamma augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model; write checkpoint and trace")
    _add_data_opts(p_train)
    _add_common_opts(p_train)
    _add_train_opts(p_train)

    p_pred = sub.add_parser("predict", help="score inputs from a checkpoint")
    _add_data_opts(p_pred)
    _add_common_opts(p_pred)
    p_pred.add_argument("--checkpoint", required=True, help="checkpoint.json from train")
    p_pred.add_argument(
        "--unlabeled", action=argparse.BooleanOptionalAction, default=False,
        help="input has no label column (csv only)",
    )

    p_eval = sub.add_parser("evaluate", help="error/NLL of a checkpoint on labeled data")
    _add_data_opts(p_eval)
    _add_common_opts(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint.json from train")

    p_cv = sub.add_parser("cv", help="k-fold cross-validated benchmark")
    _add_data_opts(p_cv)
    _add_common_opts(p_cv)
    _add_train_opts(p_cv)
    p_cv.add_argument("--folds", type=int, default=10, help="fold count (default 10)")
    p_cv.add_argument(
        "--max-test", type=int, default=100000,
        help="cap on test-fold size (default 100000)",
    )
    p_cv.add_argument(
        "--parallel", action=argparse.BooleanOptionalAction, default=False,
        help="run folds in parallel processes (default sequential)",
    )

    p_gc = sub.add_parser("gibbs-check", help="full-GP VI vs exact Gibbs agreement")
    _add_data_opts(p_gc)
    _add_common_opts(p_gc)
    p_gc.add_argument("--oracle-cap", type=int, default=1000,
                      help="refuse datasets larger than this (default 1000)")
    p_gc.add_argument("--sweeps", type=int, default=5000, help="total Gibbs sweeps (default 5000)")
    p_gc.add_argument("--burn-in", type=int, default=1000, help="burn-in sweeps (default 1000)")
    p_gc.add_argument("--thin", type=int, default=2, help="thinning stride (default 2)")
    p_gc.add_argument("--max-iters", type=int, default=200, help="VI iteration cap (default 200)")
    p_gc.add_argument(
        "--standardize", action=argparse.BooleanOptionalAction, default=True,
        help="standardize features (default on)",
    )
    p_gc.add_argument("--lengthscale", type=float, default=None,
                      help="kernel lengthscale (default sqrt(d))")
    p_gc.add_argument("--amplitude", type=float, default=None, help="kernel amplitude (default 1)")
    p_gc.add_argument("--jitter", type=float, default=None, help="diagonal jitter (default 1e-6)")
    p_gc.add_argument("--corr-threshold", type=float, default=0.99,
                      help="required posterior-mean correlation (default 0.99)")
    p_gc.add_argument("--gap-threshold", type=float, default=0.05,
                      help="allowed mean |p_mcmc - p_vi| (default 0.05)")

    p_sw = sub.add_parser("sweep-m", help="CV error/time across inducing-point counts")
    _add_data_opts(p_sw)
    _add_common_opts(p_sw)
    _add_train_opts(p_sw)
    p_sw.add_argument("--m-grid", type=_parse_m_grid, default=[16, 32, 64, 128],
                      metavar="M1,M2,...", help="inducing-point grid (default 16,32,64,128)")
    p_sw.add_argument("--folds", type=int, default=5, help="fold count per m (default 5)")
    p_sw.add_argument("--max-test", type=int, default=100000,
                      help="cap on test-fold size (default 100000)")
    p_sw.add_argument(
        "--parallel", action=argparse.BooleanOptionalAction, default=False,
        help="run folds in parallel processes (default sequential)",
    )
    return parser


def _apply_config_file(argv):
    """Expand ``--config FILE`` into flags inserted right after the subcommand.

    The file holds one ``key=value`` per line (``#`` comments allowed); keys
    are option names without the leading dashes.  Flags given on the command
    line come later in argv, so they override the file.
    """
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None:
        return argv
    extra = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if key in _BOOL_OPTS:
                truthy = value.lower() in ("1", "true", "yes", "on")
                extra.append(f"--{key}" if truthy else f"--no-{key}")
            else:
                extra.extend([f"--{key}", value])
    return [argv[0]] + extra + argv[1:]


def _load_labeled(args):
    fmt = _infer_format(args.data, args.format)
    ds = load(args.data, fmt, label_col=args.label_col, n_features=args.n_features)
    if args.canonical_sort:
        ds = canonical_order(ds)
    return ds


def _init_params(args, d):
    if args.lengthscale is None and args.amplitude is None and args.jitter is None:
        return None
    ell = args.lengthscale if args.lengthscale is not None else float(np.sqrt(d))
    amp = args.amplitude if args.amplitude is not None else 1.0
    jit = args.jitter if args.jitter is not None else 1e-6
    return KernelParams(float(np.log(ell)), float(np.log(amp)), float(np.log(jit)))


def _train_config(args, n, d, m=None, seed=None):
    mode, fixed_lr = args.lr
    return TrainConfig(
        num_inducing=min(m if m is not None else args.m, n),
        batch_size=min(args.batch, n),
        max_iters=args.max_iters,
        lr_mode=mode,
        fixed_lr=fixed_lr,
        hyper_every=args.hyper_every,
        adam_lr=args.adam_lr,
        seed=seed if seed is not None else args.seed,
        conv_mode=args.conv,
        heldout_frac=args.heldout_frac,
        quad_order=args.quad_order,
        init_params=_init_params(args, d),
        trace_train_error=args.trace_train_error,
    )


def cmd_train(args):
    ds = _load_labeled(args)
    scaler = None
    if args.standardize:
        ds, scaler = standardize(ds)
    config = _train_config(args, ds.n, ds.d)
    result = fit(ds, config)
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.json")
    trace_path = os.path.join(args.out_dir, "trace.csv")
    preprocess = None
    if scaler is not None:
        preprocess = {"means": scaler.means, "stds": scaler.stds}
    save_checkpoint(ckpt_path, result.state, args.seed, preprocess=preprocess)
    _write_csv(trace_path, "pggpc.trace.v1", result.trace_columns, result.trace)
    print(f"final_elbo={result.final_elbo!r}")
    if result.heldout is not None:
        ev = evaluate(result.state, result.heldout, args.quad_order)
        print(f"heldout_error={ev.error_rate!r} heldout_nll={ev.mean_nll!r}")
    print(
        f"wall_seconds={result.wall_seconds:.3f} iters={result.n_iters} "
        f"converged={str(result.converged).lower()}"
    )
    print(f"checkpoint={ckpt_path}")
    print(f"trace={trace_path}")
    return 0


def _restore(args):
    state, seed, preprocess = load_checkpoint(args.checkpoint)
    return state, seed, preprocess


def _apply_preprocess(X, preprocess):
    if preprocess is None:
        return X
    return (X - preprocess["means"]) / preprocess["stds"]


def cmd_predict(args):
    state, _, preprocess = _restore(args)
    fmt = _infer_format(args.data, args.format)
    if args.unlabeled:
        X = load_features(args.data, fmt, n_features=args.n_features)
    else:
        X = load(args.data, fmt, label_col=args.label_col, n_features=args.n_features).X
    X = _apply_preprocess(X, preprocess)
    mu, var = latent_predict(state, X)
    p = class_prob(mu, var, order=args.quad_order)
    label = np.where(p >= 0.5, 1, -1)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "predictions.csv")
    rows = zip(range(X.shape[0]), mu, var, p, label)
    _write_csv(out, "pggpc.predictions.v1",
               ("index", "mu_star", "var_star", "p_pos", "predicted_label"), rows)
    print(f"predictions={out} n={X.shape[0]}")
    return 0


def cmd_evaluate(args):
    state, _, preprocess = _restore(args)
    ds = _load_labeled(args)
    from .model import Dataset

    ds = Dataset(_apply_preprocess(ds.X, preprocess), ds.y)
    report = evaluate(state, ds, args.quad_order)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "metrics.csv")
    _write_csv(out, "pggpc.metrics.v1", ("error_rate", "mean_nll", "n"),
               [(report.error_rate, report.mean_nll, report.n)])
    print(f"error_rate={report.error_rate!r} mean_nll={report.mean_nll!r} n={report.n}")
    return 0


def _run_fold(payload):
    """One CV fold: standardize on the training split, fit, evaluate."""
    from .model import Dataset

    X, y, train_idx, test_idx, args_dict, m, fold_seed, do_std = payload
    train = Dataset(X[train_idx], y[train_idx])
    test = Dataset(X[test_idx], y[test_idx])
    scaler = None
    if do_std:
        train, scaler = standardize(train)
        test = scaler.apply_dataset(test)
    args = argparse.Namespace(**args_dict)
    config = _train_config(args, train.n, train.d, m=m, seed=fold_seed)
    result = fit(train, config)
    report = evaluate(result.state, test, args.quad_order)
    return report.error_rate, report.mean_nll, result.wall_seconds


def _cv_run(ds, args, m, folds):
    plan = kfold(ds.n, folds, args.seed)
    fold_seeds = np.random.default_rng(args.seed).integers(2**31, size=folds)
    payloads = [
        (ds.X, ds.y, tr, te, vars(args), m, int(fold_seeds[i]), args.standardize)
        for i, (tr, te) in enumerate(plan.folds(max_test=args.max_test))
    ]
    if getattr(args, "parallel", False):
        with concurrent.futures.ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_fold, payloads))
    else:
        results = [_run_fold(p) for p in payloads]
    return np.array(results)  # columns: error, nll, seconds


def _summary(values):
    return float(values.mean()), float(values.std())  # population std over folds


def cmd_cv(args):
    ds = _load_labeled(args)
    if args.folds < 2:
        raise ValueError("cv needs at least 2 folds")
    results = _cv_run(ds, args, args.m, args.folds)
    rows = [(i, r[0], r[1], r[2]) for i, r in enumerate(results)]
    me, se = _summary(results[:, 0])
    mn, sn = _summary(results[:, 1])
    mt, st = _summary(results[:, 2])
    rows.append(("mean", me, mn, mt))
    rows.append(("std", se, sn, st))
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "cv.csv")
    _write_csv(out, "pggpc.cv.v1", ("fold", "error_rate", "mean_nll", "train_seconds"), rows)
    print(f"{'fold':>6} {'error':>10} {'nll':>10} {'seconds':>10}")
    for i, r in enumerate(results):
        print(f"{i:>6} {r[0]:>10.4f} {r[1]:>10.4f} {r[2]:>10.3f}")
    print(f"{'mean':>6} {me:>10.4f} {mn:>10.4f} {mt:>10.3f}")
    print(f"{'std':>6} {se:>10.4f} {sn:>10.4f} {st:>10.3f}")
    print(f"cv={out}")
    return 0


def cmd_gibbs_check(args):
    ds = _load_labeled(args)
    if ds.n > args.oracle_cap:
        raise ValueError(
            f"dataset has {ds.n} points, above the Gibbs oracle cap {args.oracle_cap}"
        )
    if args.standardize:
        ds, _ = standardize(ds)
    params = _init_params(args, ds.d)
    if params is None:
        params = KernelParams(0.5 * float(np.log(ds.d)), 0.0, float(np.log(1e-6)))
    config = TrainConfig(
        num_inducing=ds.n,
        batch_size=ds.n,
        max_iters=args.max_iters,
        conv_threshold=1e-10,
        lr_mode="fixed",
        fixed_lr=1.0,
        hyper_every=0,
        seed=args.seed,
        quad_order=args.quad_order,
        init_params=params,
        inducing_Z=ds.X,
    )
    result = fit(ds, config)
    chain = gibbs_run(ds, params, iters=args.sweeps, burn_in=args.burn_in,
                      thin=args.thin, seed=args.seed)
    report = compare_to_vi(chain, result.state, ds, quad_order=args.quad_order)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "gibbs_vi.csv")
    _write_csv(out, "pggpc.gibbs_vi.v1",
               ("index", "mcmc_mean", "mcmc_var", "mcmc_ppos", "vi_mean", "vi_var", "vi_ppos"),
               report.rows())
    passed = (report.mean_corr > args.corr_threshold
              and report.mean_abs_prob_gap < args.gap_threshold)
    print(
        f"mean_corr={report.mean_corr:.6f} var_corr={report.var_corr:.6f} "
        f"prob_corr={report.prob_corr:.6f}"
    )
    print(
        f"mean_abs_prob_gap={report.mean_abs_prob_gap:.6f} "
        f"max_abs_prob_gap={report.max_abs_prob_gap:.6f}"
    )
    print(f"agreement={'PASS' if passed else 'FAIL'} "
          f"(corr > {args.corr_threshold}, gap < {args.gap_threshold})")
    print(f"pairs={out}")
    return 0 if passed else 3


def cmd_sweep_m(args):
    ds = _load_labeled(args)
    rows = []
    for m in args.m_grid:
        results = _cv_run(ds, args, m, args.folds)
        me, se = _summary(results[:, 0])
        mn, sn = _summary(results[:, 1])
        mt, _ = _summary(results[:, 2])
        rows.append((m, me, se, mn, sn, mt))
        print(f"m={m:>5} error={me:.4f}+/-{se:.4f} nll={mn:.4f}+/-{sn:.4f} seconds={mt:.3f}")
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "sweep.csv")
    _write_csv(out, "pggpc.sweep.v1",
               ("m", "mean_error", "std_error", "mean_nll", "std_nll", "mean_train_seconds"),
               rows)
    print(f"sweep={out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "gibbs-check": cmd_gibbs_check,
    "sweep-m": cmd_sweep_m,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        if argv and not argv[0].startswith("-"):
            argv = _apply_config_file(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
