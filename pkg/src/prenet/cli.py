"""
Command-line front end.

    prenet fit DATA --m 2 --gamma 0.01 --rho auto
    prenet path DATA --m 2 --gamma 1 --K 30 --criterion bic
    prenet cluster DATA --m 3 --method prenet --holdout 0.2
    prenet simulate --table 3 --T 10 --threads 4

DATA is a comma- or whitespace-delimited numeric table with observations in
rows; a header line is detected automatically. Every random choice derives
from ``--seed`` (default 0).
"""

import argparse
import json
import sys
import traceback
from dataclasses import asdict

import numpy as np

from . import __version__
from .clustering import (
    adjusted_rand_index,
    clusters_from_pss,
    indicator_loading,
    kmeans_variables,
    reconstruction_error,
)
from .model import (
    Family,
    FactorParams,
    PenaltySpec,
    SampleCovariance,
    discrepancy_loss,
    penalized_objective,
    sample_covariance,
)
from .selection import select_along_path
from .simulation import (
    STUDY_CRITERIA,
    STUDY_ESTIMATORS,
    STUDY_SAMPLE_SIZES,
    STUDY_TABLES,
    Estimator,
    format_table,
    run_study,
)
from .solver import FitConfig, fit, ml_weights, pss_fit, rho_max_from_params, solution_path

DEFAULT_SEED = 0


class CliError(Exception):
    """A user-facing failure reported as a one-line diagnostic."""


# ---------------------------------------------------------------- input

def _split(line, comma):
    return [t.strip() for t in line.split(",")] if comma else line.split()


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_table(path):
    """Read a numeric table; returns (data, column names or None)."""
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not lines:
        raise CliError(f"{path} contains no data")
    comma = "," in lines[0]
    header = None
    first = _split(lines[0], comma)
    if not all(_is_number(t) for t in first):
        header, lines = first, lines[1:]
    rows = []
    for lineno, line in enumerate(lines, start=2 if header else 1):
        tokens = _split(line, comma)
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise CliError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
        if len(rows[-1]) != len(rows[0]):
            raise CliError(f"{path}:{lineno}: expected {len(rows[0])} columns, found {len(rows[-1])}")
    if not rows:
        raise CliError(f"{path} has a header but no data rows")
    if header is not None and len(header) != len(rows[0]):
        raise CliError(f"{path}: header has {len(header)} names for {len(rows[0])} columns")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise CliError(f"{path} contains non-finite values")
    return data, header


def read_labels(path):
    data, _ = read_table(path)
    return data.ravel()


# ---------------------------------------------------------------- output

def matrix_json(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"dims": list(a.shape), "data": a.ravel().tolist()}


def matrix_from_json(d):
    return np.array(d["data"], dtype=float).reshape(d["dims"])


def params_json(params, spec=None):
    out = {"lambda": matrix_json(params.lam), "psi": params.psi.tolist()}
    if spec is not None:
        out["penalty"] = {
            "family": spec.family.value,
            "rho": spec.rho,
            "gamma": spec.gamma,
            "weights": None if spec.weights is None else np.asarray(spec.weights).tolist(),
        }
    return out


def load_report(path):
    """Parameters, penalty and covariance stored by ``fit --json``.

    Returns (FactorParams, PenaltySpec, SampleCovariance, reported objective).
    """
    with open(path) as fh:
        doc = json.load(fh)
    p = doc["params"]
    params = FactorParams(matrix_from_json(p["lambda"]), np.array(p["psi"], dtype=float))
    pen = p["penalty"]
    spec = PenaltySpec(Family(pen["family"]), pen["rho"], pen["gamma"],
                       None if pen["weights"] is None else np.array(pen["weights"]))
    c = doc["covariance"]
    cov = SampleCovariance(matrix_from_json(c["s"]), c["n"])
    return params, spec, cov, doc["objective"]


def _emit(text, out=None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _format_matrix(a, names=None, col_prefix="F"):
    a = np.atleast_2d(a)
    names = names or [f"V{i + 1}" for i in range(a.shape[0])]
    width = max(len(n) for n in names)
    cols = [f"{col_prefix}{j + 1}" if a.shape[1] > 1 else col_prefix for j in range(a.shape[1])]
    head = " " * width + "".join(f"{c:>10}" for c in cols)
    lines = [head]
    for n, row in zip(names, a):
        lines.append(f"{n:<{width}}" + "".join(f"{v:10.4f}" for v in row))
    return "\n".join(lines) + "\n"


def _write_json(path, doc):
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------- commands

def _config(args):
    return FitConfig(max_em_iter=args.max_iter, tol=args.tol, n_starts=args.n_starts, seed=args.seed)


def _load_cov(args):
    data, names = read_table(args.data)
    if args.m >= data.shape[1]:
        raise CliError(f"--m must be smaller than the number of variables ({data.shape[1]})")
    return data, names, sample_covariance(data, correlation=args.correlation)


def _spec(args, cov, rho, config):
    family = Family(args.penalty)
    gamma = args.gamma
    if gamma is None:
        gamma = {Family.MC: 3.0, Family.ELASTIC_NET: 0.5}.get(family, 1.0)
    weights = ml_weights(cov, args.m, config) if family is Family.WEIGHTED_PRENET else None
    return PenaltySpec(family, rho, gamma, weights)


def _metadata(args, config):
    cfg = {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(config).items()}
    extra = {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}
    return {"seed": args.seed, "version": __version__, "config": cfg, "arguments": extra}


def cmd_fit(args):
    data, names, cov = _load_cov(args)
    config = _config(args)
    if args.rho == "auto":
        spec = _spec(args, cov, 0.0, config)
        if spec.family not in (Family.PRENET, Family.WEIGHTED_PRENET):
            raise CliError("--rho auto is only defined for the prenet penalties")
        if not spec.gamma > 0:
            raise CliError("--rho auto needs --gamma > 0")
        res = pss_fit(cov, args.m, config)
        spec = spec.with_rho(rho_max_from_params(res.params, cov, spec.gamma, spec.weights))
    else:
        try:
            rho = float(args.rho)
        except ValueError:
            raise CliError(f"--rho must be a number or 'auto', got {args.rho!r}") from None
        spec = _spec(args, cov, rho, config)
        res = fit(cov, args.m, spec, config)
    params = res.params
    objective = penalized_objective(params, cov, spec)
    text = [
        f"penalty {spec.family.value}  rho {spec.rho:.6g}  gamma {spec.gamma:g}\n",
        f"objective {objective:.10g}  discrepancy {discrepancy_loss(params, cov):.10g}\n",
        f"converged {res.converged}  iterations {res.n_em_iter}\n\n",
        "loadings\n", _format_matrix(params.lam, names),
        "\nunique variances\n", _format_matrix(params.psi[:, None], names, "psi"),
    ]
    _emit("".join(text))
    if args.json:
        _write_json(args.json, {
            "params": params_json(params, spec),
            "objective": objective,
            "converged": res.converged,
            "n_iter": res.n_em_iter,
            "covariance": {"s": matrix_json(cov.s), "n": cov.n},
            "path": None,
            "criteria": None,
            "metadata": _metadata(args, config),
        })
    return 0


def _parse_rhos(text):
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise CliError(f"--rhos must be a comma-separated list of numbers, got {text!r}") from None


def cmd_path(args):
    data, names, cov = _load_cov(args)
    config = _config(args)
    spec = _spec(args, cov, 0.0, config)
    rhos = _parse_rhos(args.rhos) if args.rhos else None
    path = solution_path(cov, args.m, spec.gamma, args.K, config, family=spec.family,
                         weights=spec.weights, rhos=rhos)
    records = []
    for rho, f, c in zip(path.rhos, path.fits, path.criteria):
        records.append({"rho": float(rho), "p0": c.p0, "loss": discrepancy_loss(f.params, cov),
                        "aic": c.aic, "bic": c.bic, "ebic": c.ebic})
    idx = select_along_path(path, args.criterion)
    chosen = path.fits[idx]
    lines = ["rho,p0,loss,aic,bic,ebic"]
    for r in records:
        lines.append(f"{r['rho']:.6g},{r['p0']},{r['loss']:.8g},{r['aic']:.8g},{r['bic']:.8g},{r['ebic']:.8g}")
    text = "\n".join(lines) + "\n\n"
    text += f"selected by {args.criterion.upper()}: index {idx}, rho {path.rhos[idx]:.6g}\n"
    text += _format_matrix(chosen.params.lam, names)
    _emit(text)
    if args.json:
        _write_json(args.json, {
            "params": params_json(chosen.params, spec.with_rho(float(path.rhos[idx]))),
            "path": records,
            "criteria": {"name": args.criterion, "selected_index": idx,
                         **asdict(path.criteria[idx])},
            "metadata": _metadata(args, config),
        })
    return 0


def _holdout_split(n, fraction, seed):
    if not 0 < fraction < 1:
        raise CliError("--holdout must lie strictly between 0 and 1")
    n_test = int(round(fraction * n))
    if n_test < 1 or n - n_test < 2:
        raise CliError(f"--holdout {fraction} leaves too few rows in one part (n={n})")
    order = np.random.default_rng(np.random.SeedSequence([seed, n])).permutation(n)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def cmd_cluster(args):
    data, names = read_table(args.data)
    n, p = data.shape
    if args.m > p or (args.method == "prenet" and args.m >= p):
        raise CliError(f"--m is too large for {p} variables")
    train, test = (np.arange(n), None) if args.holdout is None else _holdout_split(n, args.holdout, args.seed)
    xtr = data[train]
    mean = xtr.mean(axis=0)
    scale = np.sqrt(np.mean((xtr - mean) ** 2, axis=0)) if args.correlation else np.ones(p)
    if np.any(scale == 0):
        raise CliError("cannot standardize a zero-variance column")
    if args.method == "prenet":
        cov = sample_covariance(xtr, correlation=args.correlation)
        res = pss_fit(cov, args.m, _config(args))
        assign = clusters_from_pss(res.params.lam)
        lam, psi, how = res.params.lam, res.params.psi, "posterior_mean"
    else:
        assign = kmeans_variables(xtr, args.m, n_starts=args.n_starts, seed=args.seed,
                                  standardize=args.correlation)
        lam, psi, how = indicator_loading(assign), np.ones(p), "projection"
    labels = assign.labels
    report = {"method": args.method, "labels": labels.tolist()}
    text = [f"method {args.method}\n", "variable,cluster\n"]
    text += [f"{nm},{lb}\n" for nm, lb in zip(names or [f"V{i + 1}" for i in range(p)], labels)]
    if test is not None:
        if np.any(assign.sizes == 0) or assign.has_unassigned and how == "projection":
            raise CliError("reconstruction needs every cluster to be nonempty")
        err = reconstruction_error(lam, psi, (data[test] - mean) / scale, how)
        report["holdout"] = {"fraction": args.holdout, "n_test": int(test.size),
                             "reconstruction_error": err}
        text.append(f"holdout reconstruction error ({test.size} rows): {err:.8g}\n")
    if args.reference:
        ref = read_labels(args.reference)
        if ref.size != p:
            raise CliError(f"reference has {ref.size} labels for {p} variables")
        if assign.has_unassigned:
            raise CliError("ARI is undefined with unassigned variables")
        ari = adjusted_rand_index(labels, ref)
        report["ari"] = ari
        text.append(f"adjusted Rand index vs reference: {ari:.6f}\n")
    _emit("".join(text))
    if args.json:
        doc = {"params": {"lambda": matrix_json(lam), "psi": np.asarray(psi).tolist()},
               "path": None, "criteria": None, "cluster": report,
               "metadata": _metadata(args, _config(args))}
        _write_json(args.json, doc)
    return 0


def cmd_simulate(args):
    estimators = STUDY_ESTIMATORS
    if args.estimators:
        try:
            estimators = tuple(Estimator.parse(t) for t in args.estimators.split(","))
        except ValueError as exc:
            raise CliError(f"bad --estimators: {exc}") from None
    criteria_names = tuple(c.strip().lower() for c in args.criteria.split(","))
    for c in criteria_names:
        if c not in STUDY_CRITERIA:
            raise CliError(f"unknown criterion {c!r}; choose from {', '.join(STUDY_CRITERIA)}")
    if args.table is None:
        if args.model is None or args.n is None:
            raise CliError("simulate needs --table, or both --model and --n")
        runs = [(args.model.upper(), args.n)]
    else:
        tables = sorted(STUDY_TABLES) if args.table in ("all", "paper") else [int(args.table)]
        sizes = [args.n] if args.n is not None else list(STUDY_SAMPLE_SIZES)
        runs = [(STUDY_TABLES[t], n) for t in tables for n in sizes]
    config = FitConfig(max_em_iter=args.max_iter, tol=args.tol, n_starts=args.n_starts, seed=args.seed)
    rows = []
    for tag, n in runs:
        rows += run_study(tag, n, args.T, estimators, criteria_names, seed=args.seed,
                          config=config, K=args.K, threads=args.threads)
    _emit(format_table(rows), args.out)
    return 0


# ---------------------------------------------------------------- parser

PENALTIES = [f.value for f in Family]


def _common(p, data=True):
    if data:
        p.add_argument("data", help="delimited numeric table, observations in rows")
        p.add_argument("--m", type=int, required=True, help="number of factors")
        p.add_argument("--correlation", action="store_true", help="analyse the correlation matrix")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--n-starts", type=int, default=20)
    p.add_argument("--json", default=None, metavar="PATH", help="write a structured report")


def _penalty(p):
    p.add_argument("--penalty", choices=PENALTIES, default="prenet")
    p.add_argument("--gamma", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="prenet", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true", help="print tracebacks on error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one penalized model")
    _common(p)
    _penalty(p)
    p.add_argument("--rho", default="auto", help="penalty weight, or 'auto' for the perfect simple structure fit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="solution path with information criteria")
    _common(p)
    _penalty(p)
    p.add_argument("--K", type=int, default=30, help="grid size")
    p.add_argument("--rhos", default=None, help="explicit decreasing grid, comma separated")
    p.add_argument("--criterion", choices=STUDY_CRITERIA, default="bic")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("cluster", help="cluster variables")
    _common(p)
    p.add_argument("--method", choices=("prenet", "kmeans"), default="prenet")
    p.add_argument("--holdout", type=float, default=None, metavar="FRACTION")
    p.add_argument("--reference", default=None, help="file of reference labels, one per variable")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    _common(p, data=False)
    p.add_argument("--model", choices=("A", "B", "C", "D", "a", "b", "c", "d"))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--estimators", default=None, help="e.g. lasso,mc:3,prenet:1,prenet:0.01")
    p.add_argument("--criteria", default="aic,bic,ebic")
    p.add_argument("--table", choices=("all", "paper", "3", "4", "5", "6"), default=None,
                   help="preset study: one of 3-6 or all of them ('paper' is an alias of all)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="write the table here instead of stdout")
    p.set_defaults(func=cmd_simulate)
    return parser


def _validate(args):
    if getattr(args, "m", 1) is not None and getattr(args, "m", 1) < 1:
        raise CliError("--m must be at least 1")
    if args.n_starts < 1 or args.max_iter < 1:
        raise CliError("--n-starts and --max-iter must be at least 1")
    if not args.tol > 0:
        raise CliError("--tol must be positive")
    if getattr(args, "K", 2) < 2 and getattr(args, "rhos", None) is None:
        raise CliError("--K must be at least 2")
    if getattr(args, "threads", 1) < 1 or getattr(args, "T", 1) < 1:
        raise CliError("--threads and --T must be at least 1")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        return args.func(args)
    except (CliError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        if args.verbose:
            traceback.print_exc()
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"prenet: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
