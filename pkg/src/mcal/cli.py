"""Command-line interface.

Subcommands: ``fit-ps``, ``fit-or``, ``estimate``, ``cv-path``,
``diagnose``, ``simulate``.  Exit status 0 on success, 2 on validation
errors, 3 on numerical failures.  All outputs are written only after the
computation finishes, so a failing run leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, load_csv, standardize
from .diagnostics import verify_fit
from .errors import DataError, NumericalError, SeparationError
from .estimate import aipw_mu, ate_contrast
from .outcome import fit_rmlg, fit_rmls, fit_rwl
from .pipeline import PipelineResult, estimate_target, fit_or_cv, fit_ps_cv
from .propensity import fit_rcal_ps, fit_rml_ps
from .simulation import SimConfig, run_monte_carlo

SCHEMA_VERSION = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def expand_pairwise(d: Dataset, min_frequency: float) -> Dataset:
    """Append pairwise interaction columns, dropping those whose fraction
    of nonzero values is below ``min_frequency``."""
    x = d.f[:, 1:]
    names = list(d.column_names)
    cols, new_names = [x], []
    for i in range(d.p):
        for j in range(i + 1, d.p):
            col = x[:, i] * x[:, j]
            if np.mean(col != 0.0) >= min_frequency:
                cols.append(col[:, None])
                new_names.append(f"{names[i + 1]}:{names[j + 1]}")
    f = np.column_stack([np.ones(d.n)] + cols)
    return Dataset(
        y=d.y, t=d.t, f=f, k=d.k, p=f.shape[1] - 1,
        treatment_labels=d.treatment_labels,
        column_names=tuple(names) + tuple(new_names),
    )


def _threads(args) -> int:
    env = os.environ.get("MCAL_THREADS")
    if env is not None:
        return max(1, int(env))
    if args.threads is not None:
        return max(1, args.threads)
    return os.cpu_count() or 1


def _load(args) -> tuple[Dataset, object]:
    covariates = args.covariates.split(",") if args.covariates else None
    d = load_csv(args.input, {
        "outcome": args.outcome, "treatment": args.treatment,
        "covariates": covariates,
    })
    if args.interactions == "pairwise":
        d = expand_pairwise(d, args.min_frequency)
    std = None
    if args.standardize:
        d, std = standardize(d)
    return d, std


def _parse_targets(spec: str, d: Dataset) -> list[int]:
    if spec == "all":
        return list(range(d.k))
    labels = {lab: code for code, lab in enumerate(d.treatment_labels)}
    out = []
    for tok in spec.split(","):
        lab = int(tok)
        if lab in labels:
            out.append(labels[lab])
        elif 0 <= lab < d.k:
            out.append(lab)
        else:
            raise DataError(f"unknown treatment {tok!r}")
    return out


def _coef_rows(model_kind, target_label, coef, col_labels, row_names, std):
    out_coef = std.destandardize_coef(coef) if std is not None else coef
    rows = []
    for c, col_lab in enumerate(col_labels):
        for j, rname in enumerate(row_names):
            rows.append([model_kind, target_label, col_lab, rname,
                         f"{out_coef[j, c]:.12g}"])
    return rows


def _write_coef_csv(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "target", "column", "regressor", "coefficient"])
        w.writerows(rows)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _diag_payload(diag):
    return {
        "mascd": diag.mascd,
        "rv": diag.rv,
        "weight_sum_residual": diag.weight_sum_residual,
        "balance_bound": diag.balance_bound,
        "max_balance_residual": float(diag.balance_residuals.max())
        if diag.balance_residuals.size else 0.0,
        "checks": [
            {"name": c.name, "value": c.value, "bound": c.bound, "passed": c.passed}
            for c in diag.checks
        ],
    }


def _require_converged(results):
    for tag, res in results:
        if not res.converged:
            raise NumericalError(
                f"{tag} fit did not converge: {res.message or 'iteration cap reached'}"
            )


def cmd_estimate(args) -> dict:
    d, std = _load(args)
    targets = _parse_targets(args.target, d)
    use_cv = args.penalty == "cv"
    reports, target_payloads, coef_rows = [], [], []
    shared_ps = None
    for t in targets:
        if use_cv:
            result = estimate_target(
                d, t, method=args.method, link=args.link,
                constraint=args.constraint, seed=args.seed,
                selection=args.selection, shared_ps=shared_ps,
                fold_standardize=bool(args.standardize),
            )
            if args.method in ("rmls", "rmlg") and shared_ps is None:
                shared_ps = (result.ps, result.ps_path)
            lam_ps = result.ps.penalty
            lam_or = result.or_model.penalty
        else:
            lam = float(args.penalty)
            if args.method == "rcal":
                ps = fit_rcal_ps(d, t, lam, args.constraint)
                orm = fit_rwl(d, t, ps, lam, args.link)
            else:
                if shared_ps is None:
                    shared_ps = (fit_rml_ps(d, lam, args.constraint), None)
                ps = shared_ps[0]
                orm = (fit_rmls(d, lam, args.link) if args.method == "rmls"
                       else fit_rmlg(d, lam, args.link))
            report = aipw_mu(d, orm, ps, t)
            result = PipelineResult(report, ps, orm, None, None,
                                    verify_fit(d, ps, orm, report))
            lam_ps, lam_or = ps.penalty, orm.penalty

        checks = [("propensity", result.ps.result)]
        checks += [("outcome", r) for r in result.or_model.results]
        _require_converged(checks)

        rep = result.report
        label = d.treatment_labels[t]
        lo, hi = rep.ci(args.level)
        target_payloads.append({
            "target": label,
            "mu_hat": rep.mu_hat,
            "v_hat": rep.v_hat,
            "se": float(np.sqrt(rep.v_hat / rep.n)),
            "ci": [lo, hi],
            "level": args.level,
            "nu_hat": {str(d.treatment_labels[k]): v for k, v in rep.nu_hat.items()},
            "u_hat": {str(d.treatment_labels[k]): v for k, v in rep.u_hat.items()},
            "nu_ci": {str(d.treatment_labels[k]): list(rep.nu_ci(k, args.level))
                      for k in rep.nu_hat},
            "lambda_ps": lam_ps,
            "lambda_or": lam_or,
            "ps_converged": result.ps.result.converged,
            "ps_trace": result.ps.result.trace,
            "or_trace": [list(r.trace) for r in result.or_model.results],
            "diagnostics": _diag_payload(result.diagnostics),
        })
        reports.append((t, rep))
        row_names = d.column_names
        coef_rows += _coef_rows("ps", label, result.ps.coef,
                                [str(l) for l in d.treatment_labels], row_names, std)
        if result.or_model.method == "rwl":
            col_labels = [str(d.treatment_labels[k]) for k in result.or_model.copies]
        else:
            col_labels = [str(l) for l in d.treatment_labels]
        coef_rows += _coef_rows("or", label, result.or_model.coef, col_labels,
                                row_names, std)

    contrasts = []
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            (ta, ra), (tb, rb) = reports[i], reports[j]
            c = ate_contrast(ra, rb)
            lo, hi = c.ci(args.level)
            contrasts.append({
                "a": d.treatment_labels[ta], "b": d.treatment_labels[tb],
                "diff": c.diff, "variance": c.variance, "ci": [lo, hi],
            })

    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "version": __version__,
        "method": args.method,
        "constraint": args.constraint,
        "link": args.link,
        "selection": args.selection,
        "penalty": args.penalty,
        "seed": args.seed,
        "n": d.n,
        "p": d.p,
        "treatments": list(d.treatment_labels),
        "standardized": bool(args.standardize),
        "targets": target_payloads,
        "ate_contrasts": contrasts,
    }
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "report.json", payload)
    _write_coef_csv(outdir / "coefficients.csv", coef_rows)
    return payload


def cmd_fit_ps(args) -> dict:
    d, std = _load(args)
    t = None if args.target in ("all", None) else _parse_targets(args.target, d)[0]
    if args.method == "rcal" and t is None:
        raise DataError("--target is required for the calibrated propensity fit")
    if args.penalty == "cv":
        model, path = fit_ps_cv(d, t, args.method, args.constraint,
                                seed=args.seed, selection=args.selection,
                                fold_standardize=bool(args.standardize))
    else:
        lam = float(args.penalty)
        model = (fit_rcal_ps(d, t, lam, args.constraint) if args.method == "rcal"
                 else fit_rml_ps(d, lam, args.constraint))
        path = None
    _require_converged([("propensity", model.result)])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit-ps",
        "method": args.method,
        "constraint": args.constraint,
        "target": None if t is None else d.treatment_labels[t],
        "penalty": model.penalty,
        "objective": model.result.objective,
        "converged": model.result.converged,
        "outer_iters": model.result.outer_iters,
        "active_rows": sorted(model.result.active_rows),
        "trace": model.result.trace,
        "cv": None if path is None else {
            "grid": path.grid, "cv_mean": path.cv_mean, "cv_se": path.cv_se,
            "lambda_min": path.lambda_min, "lambda_1se": path.lambda_1se,
        },
    }
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "fit.json", payload)
    _write_coef_csv(
        outdir / "coefficients.csv",
        _coef_rows("ps", payload["target"], model.coef,
                   [str(l) for l in d.treatment_labels], d.column_names, std),
    )
    return payload


def cmd_fit_or(args) -> dict:
    d, std = _load(args)
    t = _parse_targets(args.target, d)[0] if args.method == "rwl" else None
    ps = None
    if args.method == "rwl":
        ps, _ = fit_ps_cv(d, t, "rcal", args.constraint, seed=args.seed,
                          selection=args.selection,
                          fold_standardize=bool(args.standardize))
    if args.penalty == "cv":
        model, _path = fit_or_cv(d, t if t is not None else 0, args.method,
                                 args.link, ps, seed=args.seed,
                                 selection=args.selection,
                                 fold_standardize=bool(args.standardize))
    else:
        lam = float(args.penalty)
        if args.method == "rwl":
            model = fit_rwl(d, t, ps, lam, args.link)
        elif args.method == "rmls":
            model = fit_rmls(d, lam, args.link)
        else:
            model = fit_rmlg(d, lam, args.link)
    _require_converged([("outcome", r) for r in model.results])
    if model.method == "rwl":
        col_labels = [str(d.treatment_labels[k]) for k in model.copies]
    else:
        col_labels = [str(l) for l in d.treatment_labels]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit-or",
        "method": args.method,
        "link": args.link,
        "target": None if t is None else d.treatment_labels[t],
        "penalty": model.penalty,
        "converged": [r.converged for r in model.results],
    }
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "fit.json", payload)
    _write_coef_csv(outdir / "coefficients.csv",
                    _coef_rows("or", payload["target"], model.coef, col_labels,
                               d.column_names, std))
    return payload


def cmd_cv_path(args) -> dict:
    d, _std = _load(args)
    t = None if args.target in ("all", None) else _parse_targets(args.target, d)[0]
    fs = bool(args.standardize)
    if args.model == "ps":
        _model, path = fit_ps_cv(d, t, args.method, args.constraint,
                                 seed=args.seed, selection=args.selection,
                                 fold_standardize=fs)
    else:
        ps = None
        if args.method == "rwl":
            ps, _ = fit_ps_cv(d, t, "rcal", args.constraint, seed=args.seed,
                              selection=args.selection, fold_standardize=fs)
        _model, path = fit_or_cv(d, t if t is not None else 0, args.method,
                                 args.link, ps, seed=args.seed,
                                 selection=args.selection, fold_standardize=fs)
        if isinstance(path, dict):
            path = path[t if t is not None else 0]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "cv-path",
        "grid": path.grid,
        "cv_mean": path.cv_mean,
        "cv_se": path.cv_se,
        "fold_losses": path.fold_losses,
        "lambda_min": path.lambda_min,
        "lambda_1se": path.lambda_1se,
    }
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "cv_path.json", payload)
    with open(outdir / "cv_path.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "cv_mean", "cv_se"]
                   + [f"fold{s}" for s in range(path.fold_losses.shape[0])])
        for i, lam in enumerate(path.grid):
            w.writerow([f"{lam:.12g}", f"{path.cv_mean[i]:.12g}",
                        f"{path.cv_se[i]:.12g}"]
                       + [f"{v:.12g}" for v in path.fold_losses[:, i]])
    return payload


def cmd_diagnose(args) -> dict:
    payload = cmd_estimate(args)
    outdir = Path(args.output)
    diag = {
        "schema_version": SCHEMA_VERSION,
        "command": "diagnose",
        "targets": [
            {"target": t["target"], "diagnostics": t["diagnostics"]}
            for t in payload["targets"]
        ],
    }
    _write_json(outdir / "diagnostics.json", diag)
    return diag


def cmd_simulate(args) -> dict:
    cfg = SimConfig(
        config=args.config, n=args.n, p=args.p, replications=args.reps,
        seed=args.seed, methods=tuple(args.methods.split(",")),
        targets=tuple(int(t) for t in args.targets.split(",")),
    )
    summary = run_monte_carlo(cfg, threads=_threads(args))
    table = summary.table()
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    columns = [f"{m}_mu{t}" for m in summary.methods for t in summary.targets]
    with open(outdir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + columns)
        for metric, row in table.items():
            w.writerow([metric] + [f"{row[c]:.6g}" for c in columns])
    raw = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "config": args.config,
        "n": cfg.n, "p": cfg.p, "replications": cfg.replications,
        "seed": cfg.seed,
        "methods": list(summary.methods),
        "targets": list(summary.targets),
        "truth_mu": summary.truth.mu,
        "truth_mu_se": summary.truth.mu_se,
        "failed_replications": list(summary.failed),
        "estimates": summary.estimates,
        "variances": summary.variances,
    }
    _write_json(outdir / "replicates.json", raw)
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcal",
        description="Calibrated estimation of multi-valued treatment effects",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--input", required=True, help="input CSV (RFC-4180, header)")
        p.add_argument("--outcome", required=True, help="outcome column name")
        p.add_argument("--treatment", required=True, help="treatment column name")
        p.add_argument("--covariates", default=None,
                       help="comma-separated covariate columns (default: all others)")
        p.add_argument("--standardize", action=argparse.BooleanOptionalAction,
                       default=True, help="standardize covariates before fitting")
        p.add_argument("--interactions", choices=["none", "pairwise"], default="none")
        p.add_argument("--min-frequency", type=float, default=0.008,
                       help="minimum nonzero fraction for interaction columns")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--lambda", dest="penalty", default="cv",
                       help="penalty value, or 'cv' for cross-validation")
        p.add_argument("--selection", choices=["min", "1se"], default="min")
        p.add_argument("--constraint", choices=["one_to_zero", "sum_to_zero"],
                       default="one_to_zero")
        p.add_argument("--link", choices=["identity", "logit"], default="identity")
        p.add_argument("--threads", type=int, default=None)

    p_est = sub.add_parser("estimate", help="full pipeline + AIPW report")
    add_data_args(p_est)
    p_est.add_argument("--method", choices=["rcal", "rmls", "rmlg"], default="rcal")
    p_est.add_argument("--target", default="all")
    p_est.add_argument("--level", type=float, default=0.95)
    p_est.set_defaults(func=cmd_estimate)

    p_diag = sub.add_parser("diagnose", help="pipeline diagnostics only")
    add_data_args(p_diag)
    p_diag.add_argument("--method", choices=["rcal", "rmls", "rmlg"], default="rcal")
    p_diag.add_argument("--target", default="all")
    p_diag.add_argument("--level", type=float, default=0.95)
    p_diag.set_defaults(func=cmd_diagnose)

    p_ps = sub.add_parser("fit-ps", help="fit a propensity model")
    add_data_args(p_ps)
    p_ps.add_argument("--method", choices=["rcal", "rml"], default="rcal")
    p_ps.add_argument("--target", default=None,
                      help="target treatment (required for rcal)")
    p_ps.set_defaults(func=cmd_fit_ps)

    p_or = sub.add_parser("fit-or", help="fit an outcome model")
    add_data_args(p_or)
    p_or.add_argument("--method", choices=["rwl", "rmls", "rmlg"], default="rwl")
    p_or.add_argument("--target", default=None)
    p_or.set_defaults(func=cmd_fit_or)

    p_cv = sub.add_parser("cv-path", help="cross-validation path")
    add_data_args(p_cv)
    p_cv.add_argument("--model", choices=["ps", "or"], default="ps")
    p_cv.add_argument("--method", default="rcal")
    p_cv.add_argument("--target", default=None)
    p_cv.set_defaults(func=cmd_cv_path)

    p_sim = sub.add_parser("simulate", help="Monte Carlo harness")
    p_sim.add_argument("--config", choices=["C1", "C2", "C3"], required=True)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--p", type=int, default=50)
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=1)
    p_sim.add_argument("--methods", default="rcal,rmls,rmlg")
    p_sim.add_argument("--targets", default="0,1,2,3")
    p_sim.add_argument("--output", required=True)
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (DataError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, SeparationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
