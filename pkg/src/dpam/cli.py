"""Command-line interface: fit, predict, tune, simulate and rates.

Exit codes: 0 success, 2 invalid input or configuration, 3 solver failure.
Every command writes a ``manifest.json`` holding the resolved configuration;
identical configurations produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import __version__
from .model import ComponentClass, Dataset, InvalidInputError
from .serialize import doc_to_model, dumps, fmt_float, loads, model_to_doc, sha256
from .simlab import (
    CovariateDist,
    PiecewiseLinear,
    Scenario,
    Sine,
    Step,
    generate,
    rate_study,
)
from .solver import FitOptions, fit_additive, kkt_residuals, predict
from .tuning import build_plan, rate_exponent
from .uniprox import SolverError

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class UsageError(InvalidInputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------------
# table io
# ----------------------------------------------------------------------

def read_table(path):
    """Header plus a float matrix; errors name the offending row and column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InvalidInputError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InvalidInputError(f"{path}: duplicate column names in header")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise InvalidInputError(
                    f"{path}: row {i}, column {header[j]!r}: {cell!r} is not a number") from None
    return header, data


def table_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _resolve_response(header, response):
    if response is None:
        raise InvalidInputError("--response is required")
    if response in header:
        return header.index(response)
    try:
        k = int(response)
    except ValueError:
        raise InvalidInputError(f"response column {response!r} not found in header") from None
    if not 0 <= k < len(header):
        raise InvalidInputError(f"response index {k} out of range for {len(header)} columns")
    return k


def _parse_classes(text, p):
    parts = [s.strip() for s in str(text).split(",") if s.strip()]
    if len(parts) == 1:
        parts = parts * p
    if len(parts) != p:
        raise InvalidInputError(f"--classes lists {len(parts)} classes for {p} covariates")
    return [ComponentClass.parse(s) for s in parts]


def _parse_ints(text, name):
    try:
        vals = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise InvalidInputError(f"{name} must be a comma-separated list of integers") from None
    return vals


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def _load_dataset(args):
    header, table = read_table(args.data)
    k = _resolve_response(header, args.response)
    names = [h for i, h in enumerate(header) if i != k]
    if not names:
        raise InvalidInputError("no covariate columns besides the response")
    x = np.delete(table, k, axis=1)
    y = table[:, k]
    scaling = None
    if args.rescale:
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = np.clip((x - lo) / span, 0.0, 1.0)
        scaling = {"min": lo.tolist(), "max": hi.tolist()}
    else:
        bad = np.argwhere((x < 0) | (x > 1))
        if bad.size:
            i, j = bad[0]
            raise InvalidInputError(
                f"column {names[j]!r}, row {i + 2}: value {x[i, j]!r} outside [0, 1] (use --rescale)")
    return Dataset(x, y, tuple(names)), header[k], scaling


def _plan_from_args(data, args):
    classes = _parse_classes(args.classes, data.p)
    return build_plan(
        data, classes, q=args.q, C1=args.c1, epsilon=args.epsilon, A0=args.a0,
        variant=args.variant, MF=args.mf, Mq=args.mq, B0star=args.b0star, c1_factor=args.c1_factor,
    )


def cmd_fit(args, config):
    data, response, scaling = _load_dataset(args)
    plan = _plan_from_args(data, args)
    fit = fit_additive(data, plan, FitOptions(tol=args.tol, max_sweeps=args.max_sweeps,
                                             shuffle=args.shuffle, seed=args.seed))
    gaps = kkt_residuals(fit, data, plan)
    doc = model_to_doc(fit, plan, {"response": response, "rescale": scaling, "config": config})
    rows = [("objective", i, "", v) for i, v in enumerate(fit.objective_trace)]
    names = data.column_names
    rows += [("kkt_gap", j, names[j], float(g)) for j, g in enumerate(gaps)]
    rows += [("active", j, names[j], int(c is not None)) for j, c in enumerate(fit.components)]
    return {
        "model.json": dumps(doc),
        "metrics.csv": table_text(["metric", "index", "name", "value"], rows),
    }


def cmd_predict(args, config):
    if not args.model:
        raise InvalidInputError("--model is required")
    try:
        with open(args.model, encoding="utf-8") as fh:
            doc = loads(fh.read())
    except OSError as exc:
        raise InvalidInputError(f"cannot read {args.model}: {exc.strerror}") from exc
    fit, _ = doc_to_model(doc)
    header, table = read_table(args.data)
    cols = []
    for name in fit.column_names:
        if name not in header:
            raise InvalidInputError(f"covariate column {name!r} missing from {args.data}")
        cols.append(header.index(name))
    x = table[:, cols]
    scaling = doc.get("rescale")
    if scaling:
        lo = np.asarray(scaling["min"])
        hi = np.asarray(scaling["max"])
        x = (x - lo) / np.where(hi > lo, hi - lo, 1.0)
    yhat = predict(fit, x)
    return {"predictions.csv": table_text(["row", "prediction"], [(i, float(v)) for i, v in enumerate(yhat)])}


def cmd_tune(args, config):
    data, _, _ = _load_dataset(args)
    plan = _plan_from_args(data, args)
    doc = {"n": data.n, "p": data.p, "column_names": list(data.column_names),
           "plan": plan.to_dict(), "config": config}
    return {"plan.json": dumps(doc)}


def _shape(name, k, jumps):
    if name == "step":
        return Step.regular(jumps + (k % 2))
    if name == "linear":
        return PiecewiseLinear.tent()
    if name == "sine":
        return Sine(freq=1.0 + (k % 2))
    raise InvalidInputError(f"unknown shape {name!r}")


def _scenario_from_args(args, n):
    if args.p < 1:
        raise InvalidInputError("--p must be at least 1")
    q = args.q
    m0 = args.p if (q > 0 and args.m0 is None) else (3 if args.m0 is None else args.m0)
    if not 1 <= m0 <= args.p:
        raise InvalidInputError(f"--m0 must lie in [1, {args.p}]")
    shapes = tuple(_shape(args.shape, k, args.jumps) for k in range(m0))
    return Scenario(
        n=n, p=args.p, active=tuple(range(m0)), shapes=shapes, noise_sd=args.noise_sd,
        covariate_dist=CovariateDist.parse(args.covariates), seed=args.seed, q=q,
        amplitude=args.amplitude, noise=args.noise, cls=ComponentClass.parse(args.classes.split(",")[0]),
    )


def cmd_simulate(args, config):
    scen = _scenario_from_args(args, args.n)
    data, truth = generate(scen)
    header = [f"x{j}" for j in range(data.p)] + ["y"]
    rows = [tuple(float(v) for v in row) + (float(yv),) for row, yv in zip(data.x, data.y)]
    tdoc = {"MF": truth.MF, "Mq": truth.Mq, "q": truth.q,
            "active": list(scen.active),
            "qnorms": [c.qnorm for c in truth.components if c is not None],
            "fnorms": [c.fnorm for c in truth.components if c is not None],
            "metadata": truth.metadata, "config": config}
    return {"data.csv": table_text(header, rows), "truth.json": dumps(tdoc)}


def cmd_rates(args, config):
    grid = _parse_ints(args.n_grid, "--n-grid")
    if len(grid) < 3:
        raise InvalidInputError("--n-grid needs at least 3 sample sizes for a slope")
    if args.reps < 3:
        raise InvalidInputError("--reps must be at least 3")
    template = _scenario_from_args(args, grid[0])
    classes = _parse_classes(args.classes, args.p)
    res = rate_study(template, grid, args.reps, variant=args.variant, C1=args.c1, A0=args.a0,
                     epsilon=args.epsilon, B0star=args.b0star, classes=classes,
                     opts=FitOptions(tol=args.tol, max_sweeps=args.max_sweeps), n_mc=args.n_mc,
                     seed=args.seed)
    cells = [(n, r, en, eq, st) for n, r, en, eq, st in res.cell_table()]
    mean_n, mean_q = res.mean_errors("n"), res.mean_errors("Q")
    summary = [("grid", i, n, float(np.log(n)), float(a), float(b), float(np.log(a)), float(np.log(b)))
               for i, (n, a, b) in enumerate(zip(res.grid, mean_n, mean_q))]
    beta0 = min(c.beta() for c in classes)
    fitted = [
        ("slope_n", res.slope_n, res.stderr_n),
        ("slope_Q", res.slope_Q, res.stderr_Q),
        ("theory", rate_exponent(args.q, beta0), 0.0),
    ]
    return {
        "cells.csv": table_text(["n", "rep", "error_n", "error_Q", "status"], cells),
        "summary.csv": table_text(["kind", "index", "n", "log_n", "mean_error_n", "mean_error_Q",
                                   "log_error_n", "log_error_Q"], summary),
        "slopes.csv": table_text(["quantity", "value", "stderr"], fitted),
    }


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
}


# ----------------------------------------------------------------------
# argument handling
# ----------------------------------------------------------------------

def _add_plan_flags(sp):
    sp.add_argument("--classes", default="bv1", help="one class for all covariates or a comma list (bv1, bv2, sob1, sob2)")
    sp.add_argument("--q", type=float, default=0.0)
    sp.add_argument("--c1", type=float, default=None, help="noise constant; default is a plug-in estimate")
    sp.add_argument("--c1-factor", type=float, default=1.0)
    sp.add_argument("--a0", type=float, default=2.0)
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--b0star", type=float, default=1.0)
    sp.add_argument("--variant", choices=["adaptive", "dependent"], default="adaptive")
    sp.add_argument("--mf", type=float, default=None)
    sp.add_argument("--mq", type=float, default=None)


def _add_fit_flags(sp):
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-sweeps", type=int, default=500)
    sp.add_argument("--shuffle", action="store_true")


def _add_scenario_flags(sp):
    sp.add_argument("--p", type=int, default=10)
    sp.add_argument("--m0", type=int, default=None, help="active components (default 3, or p when q > 0)")
    sp.add_argument("--shape", choices=["step", "linear", "sine"], default="step")
    sp.add_argument("--jumps", type=int, default=1)
    sp.add_argument("--noise-sd", type=float, default=1.0)
    sp.add_argument("--noise", choices=["gaussian", "bounded"], default="gaussian")
    sp.add_argument("--covariates", default="uniform", help="uniform or linear(a) with 0 < a < 2")
    sp.add_argument("--amplitude", type=float, default=1.0)


def build_parser():
    ap = _Parser(prog="dpam", description="Doubly penalized sparse additive models.")
    ap.add_argument("--version", action="version", version=f"dpam {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON document with flag values")
        sp.add_argument("--out", required=False, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        if name in ("fit", "tune", "predict"):
            sp.add_argument("--data", default=None)
        if name in ("fit", "tune"):
            sp.add_argument("--response", default=None)
            sp.add_argument("--rescale", action="store_true", help="min-max scale covariates to [0, 1]")
            _add_plan_flags(sp)
        if name == "fit":
            _add_fit_flags(sp)
        if name == "predict":
            sp.add_argument("--model", default=None)
        if name == "simulate":
            sp.add_argument("--n", type=int, default=200)
            sp.add_argument("--q", type=float, default=0.0)
            sp.add_argument("--classes", default="bv1")
            _add_scenario_flags(sp)
        if name == "rates":
            sp.add_argument("--n-grid", default="128,256,512,1024,2048")
            sp.add_argument("--reps", type=int, default=20)
            sp.add_argument("--n-mc", type=int, default=2000)
            _add_plan_flags(sp)
            sp.add_argument("--tol", type=float, default=1e-6)
            sp.add_argument("--max-sweeps", type=int, default=200)
            _add_scenario_flags(sp)
        sp.set_defaults(_sub=sp)
    return ap


def _resolve(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    sp = args._sub
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                conf = loads(fh.read())
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {args.config}: {exc.strerror}") from exc
        if not isinstance(conf, dict):
            raise InvalidInputError("config document must be a key-value object")
        dests = {a.dest for a in sp._actions} - {"help", "config", "_sub"}
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
        unknown = sorted(set(conf) - dests)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {unknown}")
        sp.set_defaults(**conf)
        # command-line flags win over the config document
        args = ap.parse_args(argv)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("_sub", "config", "out")}
    return args, config


def _write(outdir, files, config, command):
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "tool": "dpam",
        "version": __version__,
        "command": command,
        "config": config,
        "artifacts": {name: sha256(text) for name, text in sorted(files.items())},
    }
    files = dict(files)
    files["manifest.json"] = dumps(manifest)
    for name, text in files.items():
        with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, config = _resolve(argv)
        if args.command in ("fit", "tune", "predict") and not args.data:
            raise InvalidInputError("--data is required")
        if not args.out:
            raise InvalidInputError("--out is required")
        files = COMMANDS[args.command](args, config)
        _write(args.out, files, config, args.command)
    except SolverError as exc:
        print(f"dpam: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidInputError, ValueError, KeyError, TypeError) as exc:
        print(f"dpam: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
