"""Command-line interface: ``anovacheb {fit,gsi,refit,predict,bench,diag,sample}``.

Outputs are JSON documents (``--csv`` switches tables to comma-separated
text).  Exit codes: 0 success, 2 usage, 3 data, 4 numeric, 5 resource.
The default thread count comes from ``ANOVACHEB_THREADS``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from anovacheb import __version__
from anovacheb.anova import detect_active_set, global_sensitivity_indices, superposition_dimension
from anovacheb.core import Dataset, Density, GroupedIndexSet, build_superposition_term_set, read_dataset, read_points
from anovacheb.errors import AnovaChebError, UsageError
from anovacheb.pipeline import evaluate, fit_initial, load_model, refit, save_model
from anovacheb.solver import DEFAULT_THETA, LsqrConfig, spectral_diagnostic
from anovacheb.transform import default_threads
from anovacheb import testbench as tb

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_RESOURCE = 2, 3, 4, 5
BENCHMARKS = ("bspline", "friedman1", "friedman2", "friedman3")


# ----------------------------------------------------------------------------
# argument types (ranges are checked while parsing, before any work is done)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}") from None
    if not vals or any(v < 2 for v in vals):
        raise argparse.ArgumentTypeError(f"bandlimits must be integers >= 2, got {text!r}")
    return tuple(vals)


def _eps_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of numbers, got {text!r}") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError(f"thresholds must lie in (0, 1), got {text!r}")
    return tuple(vals)


def _open_unit(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0.0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return v


def _add_solver_flags(p):
    p.add_argument("--density", choices=("cheb", "uniform"), default="cheb")
    p.add_argument("--theta", type=_open_unit, default=DEFAULT_THETA, help="padding for uniform nodes")
    p.add_argument("--max-iter", type=_positive_int, default=1000)
    p.add_argument("--tol", type=_positive_float, default=1e-8)
    p.add_argument("--no-weighting", action="store_true",
                   help="plain least squares on uniform nodes (no sqrt(omega) preconditioner)")


def _add_common(p):
    p.add_argument("--output", "-o", help="output file (default: stdout)")
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--csv", action="store_true", help="write tables as comma-separated text")


def build_parser():
    parser = argparse.ArgumentParser(prog="anovacheb", description="ANOVA-truncated Chebyshev least-squares fitting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit all terms up to order ds")
    p.add_argument("--input", "-i", required=True, help="data file: d coordinate columns then the value")
    p.add_argument("--model", "-m", help="where to save the fitted model")
    p.add_argument("--d", type=_positive_int)
    p.add_argument("--ds", type=_positive_int, default=2)
    p.add_argument("--N", type=_int_list, default=(20, 8), help="bandlimit per order, e.g. 20,8")
    _add_solver_flags(p)
    _add_common(p)

    p = sub.add_parser("gsi", help="global sensitivity indices of a saved model")
    p.add_argument("--input", "-i", required=True, help="model file")
    p.add_argument("--eps", type=_eps_list, help="preview the active set for these thresholds")
    p.add_argument("--delta", type=float, default=1.0, help="accuracy for the superposition dimension")
    p.add_argument("--no-closure", action="store_true")
    _add_common(p)

    p = sub.add_parser("refit", help="detect the active set of a model and refit on it")
    p.add_argument("--input", "-i", required=True, help="data file")
    p.add_argument("--model", "-m", required=True, help="initial model file")
    p.add_argument("--save", "-s", help="where to save the refitted model")
    p.add_argument("--eps", type=_eps_list, default=(0.005, 0.005))
    p.add_argument("--N", type=_int_list, default=(60, 12), help="refit bandlimit per order")
    p.add_argument("--no-closure", action="store_true")
    _add_solver_flags(p)
    _add_common(p)

    p = sub.add_parser("predict", help="evaluate a saved model")
    p.add_argument("--model", "-m", required=True)
    p.add_argument("--input", "-i", required=True, help="points (d columns, optional value column)")
    _add_common(p)

    p = sub.add_parser("bench", help="run a benchmark experiment")
    p.add_argument("name", choices=BENCHMARKS)
    p.add_argument("--repetitions", "-R", type=_positive_int, default=None)
    p.add_argument("--M", type=_positive_int, default=None)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--detect", action="store_true", help="Friedman: detect the active set instead of fixing it")
    p.add_argument("--N", type=_int_list, default=None, help="bspline: initial bandlimits")
    p.add_argument("--eps", type=_eps_list, default=None)
    p.add_argument("--density", choices=("cheb", "uniform"), default=None)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--weighted", action="store_true", help="Friedman: use the sqrt(omega) preconditioner")
    _add_common(p)

    p = sub.add_parser("diag", help="extreme singular values of the (weighted) basis matrix")
    p.add_argument("--input", "-i", help="data file supplying the nodes (otherwise nodes are sampled)")
    p.add_argument("--d", type=_positive_int, default=3)
    p.add_argument("--ds", type=_positive_int, default=2)
    p.add_argument("--N", type=_int_list, default=(18, 5))
    p.add_argument("--M", type=_positive_int, default=2000)
    p.add_argument("--density", choices=("cheb", "uniform"), default="cheb")
    p.add_argument("--theta", type=_open_unit, default=DEFAULT_THETA)
    p.add_argument("--delta", type=_open_unit, default=0.05)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--trials", type=_positive_int, default=1)
    p.add_argument("--unweighted", action="store_true")
    _add_common(p)

    p = sub.add_parser("sample", help="write a sampled benchmark data set")
    p.add_argument("function", choices=BENCHMARKS)
    p.add_argument("--M", type=_positive_int, default=None)
    p.add_argument("--density", choices=("cheb", "uniform"), default=None)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--noise", type=float, default=None, help="noise standard deviation (Friedman default)")
    p.add_argument("--output", "-o", help="output file (default: stdout)")
    return parser


# ----------------------------------------------------------------------------
# output helpers


def _dumps(doc):
    return json.dumps(doc, indent=1) + "\n"


def _emit(args, text):
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _term_label(u):
    return "-".join(map(str, u)) if u else "0"


def _lsqr(args):
    return LsqrConfig(args.max_iter, args.tol)


class _Run:
    """Tracks the current stage so failures can name it."""

    def __init__(self):
        self.stage = "setup"


# ----------------------------------------------------------------------------
# commands


def cmd_fit(args, run):
    run.stage = "read data"
    data = read_dataset(args.input, args.density, args.d)
    if len(args.N) != args.ds:
        raise UsageError(f"--N needs {args.ds} values for ds={args.ds}, got {len(args.N)}")
    run.stage = "fit"
    model = fit_initial(data, args.ds, args.N, _lsqr(args), args.theta, args.threads,
                        weighted=not args.no_weighting)
    if args.model:
        run.stage = "save model"
        save_model(model, args.model)
    _emit(args, _dumps({"model": args.model, "report": model.metadata}))
    return 0


def _gsi_doc(report, args):
    doc = report.to_dict()
    doc["superpositionDimension"] = superposition_dimension(report, args.delta)
    doc["ranking"] = [list(u) for u in report.ranked()]
    return doc


def cmd_gsi(args, run):
    run.stage = "load model"
    model = load_model(args.input)
    run.stage = "sensitivity indices"
    report = global_sensitivity_indices(model.coefficients)
    if args.eps is not None:
        detect_active_set(report, args.eps, closure=not args.no_closure)
    if args.csv:
        active = set(report.detected_active_set.terms) if report.detected_active_set is not None else None
        rows = []
        for u in model.index_set.terms:
            if not u:
                continue
            row = [_term_label(u), report.term_variances[u], report.gsi[u]]
            if active is not None:
                row.append(int(u in active))
            rows.append(row)
        header = ["term", "variance", "gsi"] + (["active"] if active is not None else [])
        _emit(args, _csv_text(header, rows))
    else:
        _emit(args, _dumps(_gsi_doc(report, args)))
    return 0


def cmd_refit(args, run):
    run.stage = "load model"
    initial = load_model(args.model)
    run.stage = "read data"
    data = read_dataset(args.input, args.density, initial.d)
    run.stage = "detect active set"
    report = global_sensitivity_indices(initial.coefficients)
    active = detect_active_set(report, args.eps, closure=not args.no_closure)
    if len(args.N) < active.max_order:
        raise UsageError(f"--N needs a bandlimit for every order up to {active.max_order}")
    run.stage = "refit"
    final = refit(data, active, list(args.N)[: max(active.max_order, 1)], _lsqr(args), args.theta,
                  initial=initial, threads=args.threads, weighted=not args.no_weighting)
    if args.save:
        run.stage = "save model"
        save_model(final, args.save)
    _emit(args, _dumps({"model": args.save, "activeSet": active.to_list(),
                        "closureAdded": [list(u) for u in active.closure_added], "report": final.metadata}))
    return 0


def cmd_predict(args, run):
    run.stage = "load model"
    model = load_model(args.model)
    run.stage = "read points"
    x, y = read_points(args.input, model.d)
    run.stage = "evaluate"
    values = evaluate(model, x, threads=args.threads)
    if args.csv or not args.output:
        header = ["prediction"] + (["value"] if y is not None else [])
        rows = [[float(v)] + ([float(t)] if y is not None else []) for v, t in
                zip(values, y if y is not None else values)]
        text = _csv_text(header, rows)
    else:
        doc = {"predictions": values.tolist()}
        if y is not None:
            doc["mse"] = float(np.mean((y - values) ** 2))
        text = _dumps(doc)
    _emit(args, text)
    return 0


def _bench_bspline(args):
    reps = args.repetitions or 1
    kw = {}
    if args.M:
        kw["M"] = args.M
    if args.N:
        kw["n_initial"] = args.N
    if args.eps:
        kw["eps"] = args.eps
    reference = tb.BSplineReference()
    records = [tb.run_bspline_experiment(density=args.density or "cheb", seed=args.seed + r, threads=args.threads,
                                         reference=reference, **kw) for r in range(reps)]
    summary = {"name": "bspline", "repetitions": reps,
               "recovered": sum(rec["recovered"] for rec in records),
               "minSeparation": min(rec["separation"] for rec in records)}
    return summary, records


def _bench_friedman(args, i):
    over = {"seed": args.seed, "weighted": args.weighted}
    if args.repetitions:
        over["repetitions"] = args.repetitions
    if args.M:
        over["M"] = args.M
    if args.eps:
        over["eps"] = args.eps
    spec = tb.friedman_spec(i, **over)
    result = tb.run_friedman_experiment(spec, detect=args.detect, workers=args.workers, threads=args.threads)
    summary = result.summary()
    summary["competitors"] = tb.REFERENCE_MEDIANS[i]
    return summary, result.records


def cmd_bench(args, run):
    run.stage = f"benchmark {args.name}"
    if args.name == "bspline":
        summary, records = _bench_bspline(args)
    else:
        summary, records = _bench_friedman(args, int(args.name[-1]))
    if args.csv:
        if args.name == "bspline":
            rows = [[r["seed"], r["initial"]["train_error"], r["initial"]["l2_error"], int(r["recovered"]),
                     r["separation"]] + ([r["refit"]["train_error"], r["refit"]["l2_error"]] if "refit" in r else [])
                    for r in records]
            header = ["seed", "initial_train_error", "initial_l2_error", "recovered", "separation",
                      "refit_train_error", "refit_l2_error"]
        else:
            rows = [[r["repetition"], r["seed"], r["mse"], r["train_error"], r["iterations"]] for r in records]
            header = ["repetition", "seed", "mse", "train_error", "iterations"]
        _emit(args, _csv_text(header, rows))
    else:
        _emit(args, _dumps({"summary": summary, "records": records}))
    return 0


def cmd_diag(args, run):
    run.stage = "nodes"
    if args.input:
        data = read_dataset(args.input, args.density)
        node_sets = [data.nodes]
        d = data.d
    else:
        d = args.d
        node_sets = [tb.sample_nodes(d, args.M, args.seed + t, args.density) for t in range(args.trials)]
    if len(args.N) != args.ds:
        raise UsageError(f"--N needs {args.ds} values for ds={args.ds}")
    index_set = GroupedIndexSet.with_order_bandlimits(build_superposition_term_set(d, args.ds), args.N)
    run.stage = "spectral diagnostic"
    weighted = Density.parse(args.density) == Density.UNIFORM and not args.unweighted
    reports = [spectral_diagnostic(X, index_set, weighted=weighted, delta=args.delta, theta=args.theta)
               for X in node_sets]
    if args.csv:
        rows = [[t, r.min_singular, r.max_singular, r.lower_bound, r.upper_bound, int(r.inside)]
                for t, r in enumerate(reports)]
        _emit(args, _csv_text(["trial", "min_singular", "max_singular", "lower", "upper", "inside"], rows))
    else:
        _emit(args, _dumps({"cardinality": index_set.cardinality(), "inside": sum(r.inside for r in reports),
                            "trials": len(reports), "reports": [r.to_dict() for r in reports]}))
    return 0


def cmd_sample(args, run):
    run.stage = "sample"
    if args.function == "bspline":
        X = tb.sample_nodes(8, args.M or 10000, args.seed, args.density or "cheb")
        y = tb.bspline_test_function(X.nodes)
        if args.noise:
            y = tb.add_noise(y, args.noise, args.seed + 1)
        data = Dataset(X, y)
    else:
        i = int(args.function[-1])
        over = {}
        if args.M:
            over["M"] = args.M
        if args.noise is not None:
            over["sigma"] = args.noise
        if args.density:
            over["density"] = args.density
        data, _ = tb.friedman_data(tb.friedman_spec(i, **over), args.seed)
    rows = [[float(v) for v in xr] + [float(yv)] for xr, yv in zip(data.nodes.nodes, data.values)]
    _emit(args, _csv_text([f"x{s}" for s in range(1, data.d + 1)] + ["y"], rows))
    return 0


COMMANDS = {"fit": cmd_fit, "gsi": cmd_gsi, "refit": cmd_refit, "predict": cmd_predict,
            "bench": cmd_bench, "diag": cmd_diag, "sample": cmd_sample}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = default_threads()
    run = _Run()
    try:
        return COMMANDS[args.command](args, run)
    except AnovaChebError as exc:
        print(f"anovacheb {args.command}: {run.stage} failed: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"anovacheb {args.command}: {run.stage} failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MemoryError as exc:
        print(f"anovacheb {args.command}: {run.stage} failed: out of memory ({exc})", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
