"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 degenerate model.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import montecarlo
from .factors import ESTIMATORS
from .inference import HacOptions, hac_phi, loading_confidence_intervals
from .model import DegenerateModelError, FactorModelFit, InputError, PanelData, demean, read_panel_csv, write_matrix_csv
from .pca import fit_pc
from .qml import EmConfig, fit_qml_em, fit_qml_homoskedastic
from .simulate import DgpConfig, export, simulate_panel

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3

log = logging.getLogger("fme")


def fit_to_dict(fit: FactorModelFit, demeaned: bool) -> dict:
    return {
        "r": fit.r,
        "method": fit.method,
        "loadings": np.asarray(fit.loadings).tolist(),
        "idio_variances": np.asarray(fit.idio_variances).tolist(),
        "factors": np.asarray(fit.factors).tolist(),
        "diagnostics": fit.diagnostics,
        "demeaned": demeaned,
        "column_means": np.asarray(fit.column_means).tolist(),
        "names": list(fit.names) if fit.names else None,
    }


def load_fit(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read fit file {path}: {exc}") from None
    for key in ("r", "method", "loadings", "idio_variances", "factors"):
        if key not in d:
            raise InputError(f"fit file {path} lacks key {key!r}")
    d["loadings"] = np.array(d["loadings"], dtype=float).reshape(-1, d["r"])
    d["idio_variances"] = np.array(d["idio_variances"], dtype=float)
    d["factors"] = np.array(d["factors"], dtype=float).reshape(-1, d["r"])
    return d


def _panel_for_fit(fit: dict, path) -> np.ndarray:
    x = read_panel_csv(path).values
    if x.shape[1] != fit["loadings"].shape[0]:
        raise InputError(f"panel has {x.shape[1]} series, fit has {fit['loadings'].shape[0]}")
    if fit.get("demeaned"):
        x = x - np.asarray(fit["column_means"], dtype=float)
    return x


def _read_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise InputError(f"config {path} must be a JSON object")
    return d


def _write_rows(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_estimate(args) -> int:
    panel = read_panel_csv(args.input)
    if args.demean:
        panel = demean(panel)
    if args.method == "pc":
        fit = fit_pc(panel, args.r)
    elif args.method == "qml":
        cfg = EmConfig(max_iterations=args.em_max_iter, loglik_rel_tol=args.em_tol)
        fit = fit_qml_em(panel, args.r, cfg)
        if not fit.diagnostics["converged"]:
            print(f"warning: EM did not converge in {args.em_max_iter} iterations", file=sys.stderr)
    else:
        fit = fit_qml_homoskedastic(panel, args.r)
    Path(args.output).write_text(json.dumps(fit_to_dict(fit, panel.demeaned)))
    return EXIT_OK


def cmd_factors(args) -> int:
    fit = load_fit(args.fit)
    x = _panel_for_fit(fit, args.input)
    est = ESTIMATORS[args.estimator]
    if args.estimator == "ols":
        f = est(x, fit["loadings"])
    else:
        f = est(x, fit["loadings"], fit["idio_variances"])
    header = [f"f{j + 1}" for j in range(fit["r"])]
    if args.output:
        write_matrix_csv(args.output, f, header)
    else:
        _write_rows(None, header, [[repr(float(v)) for v in row] for row in f])
    return EXIT_OK


def cmd_se(args) -> int:
    fit = load_fit(args.fit)
    x = _panel_for_fit(fit, args.input)
    f = fit["factors"]
    if f.shape[0] != x.shape[0]:
        raise InputError(f"panel has T={x.shape[0]} but fit factors have T={f.shape[0]}")
    resid = x - f @ fit["loadings"].T
    bw = args.bandwidth if args.bandwidth == "auto" else _int(args.bandwidth, "--bandwidth")
    hac = hac_phi(f, resid, HacOptions(bw))
    obj = FactorModelFit(fit["loadings"], fit["idio_variances"], f, resid, fit["r"], fit["method"])
    ci = loading_confidence_intervals(obj, hac, args.level)
    names = fit.get("names") or [f"x{i + 1}" for i in range(x.shape[1])]
    rows = []
    for i, name in enumerate(names):
        for j in range(fit["r"]):
            rows.append([name, j + 1] + [repr(float(ci[k][i, j])) for k in ("estimate", "se", "lower", "upper")])
    _write_rows(args.output, ["series", "factor", "estimate", "se", "lower", "upper"], rows)
    print(f"bandwidth used: {hac.bandwidth_used}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = DgpConfig.from_dict(_read_json(args.config))
    export(simulate_panel(cfg), args.output, args.truth)
    return EXIT_OK


def cmd_mc(args) -> int:
    d = _read_json(args.config)
    if args.reps is not None:
        d["replications"] = args.reps
    if args.seed is not None:
        d["master_seed"] = args.seed
    d["threads"] = args.threads
    cfg = montecarlo.McConfig.from_dict(d)
    result = montecarlo.run_mc(cfg)
    Path(args.out).write_text(montecarlo.to_csv(result))
    table = montecarlo.format_tables(result)
    if args.text:
        Path(args.text).write_text(table)
    else:
        sys.stderr.write(table)
    return EXIT_OK


def _int(v, name) -> int:
    try:
        return int(v)
    except ValueError:
        raise InputError(f"{name} must be an integer or 'auto', got {v!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fme", description="Approximate factor model estimation by PC and QML.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate loadings from a CSV panel")
    e.add_argument("--input", required=True)
    e.add_argument("--r", type=int, required=True)
    e.add_argument("--method", choices=["pc", "qml", "qml-homo"], default="pc")
    e.add_argument("--demean", action="store_true")
    e.add_argument("--em-max-iter", type=int, default=EmConfig.max_iterations)
    e.add_argument("--em-tol", type=float, default=EmConfig.loglik_rel_tol)
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_estimate)

    f = sub.add_parser("factors", help="recover factors given a fit")
    f.add_argument("--fit", required=True)
    f.add_argument("--estimator", choices=sorted(ESTIMATORS), default="ols")
    f.add_argument("--input", required=True)
    f.add_argument("--output")
    f.set_defaults(func=cmd_factors)

    s = sub.add_parser("se", help="HAC standard errors and confidence intervals for the loadings")
    s.add_argument("--fit", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--bandwidth", default="auto")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--output")
    s.set_defaults(func=cmd_se)

    m = sub.add_parser("simulate", help="simulate one panel from a DGP config")
    m.add_argument("--config", required=True)
    m.add_argument("--output", required=True)
    m.add_argument("--truth")
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("mc", help="Monte Carlo tables over a grid of designs")
    c.add_argument("--config", required=True)
    c.add_argument("--reps", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.add_argument("--text")
    c.add_argument("--threads", type=int, default=int(os.environ.get("FME_THREADS", "1")))
    c.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateModelError, np.linalg.LinAlgError) as exc:
        print(f"degenerate model: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
