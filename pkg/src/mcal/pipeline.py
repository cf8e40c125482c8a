"""End-to-end estimation pipelines: cross-validated propensity and outcome
fits feeding the augmented IPW estimator, per target treatment.

Method names follow the estimator families:

* ``rcal``: calibrated propensity fit (one per target) + weighted-likelihood
  outcome fit with per-copy coefficients;
* ``rmls``: likelihood propensity fit (shared across targets) + separate
  Lasso outcome fits per treatment group;
* ``rmlg``: likelihood propensity fit + joint group-Lasso outcome fit.

Penalties are selected by 5-fold cross-validation of the same loss used for
fitting; the propensity fit for ``rcal`` outcome fitting is determined
first and held fixed during outcome cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, standardize
from .diagnostics import BalanceReport, verify_fit
from .engine import SolveConfig, solve
from .estimate import EstimateReport, aipw_mu
from .outcome import LINKS, ORModel, fit_rmlg, fit_rmls, fit_rwl, or_adapter
from .propensity import PSModel, fit_rcal_ps, fit_rml_ps, predict_probs, ps_adapter
from .tuning import CVPath, cv5, lambda_grid, lambda_star_or, lambda_star_ps


def _child_seed(seed, *tags) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tags)
    entropy = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    return np.random.SeedSequence(entropy, spawn_key=tags)


def _selected_index(path: CVPath, selection: str) -> int:
    if selection == "min":
        return path.index_min
    if selection == "1se":
        return path.index_1se
    raise ValueError(f"unknown selection {selection!r}")


def _fold_cfg(cfg: SolveConfig | None) -> SolveConfig:
    """Solver controls for cross-validation fold fits: the CV curve only
    needs loss values to a few decimals, so fold fits may stop earlier than
    the final full-data fit (which keeps the caller's tolerances)."""
    base = cfg if cfg is not None else SolveConfig()
    return replace(base, tol_obj=max(base.tol_obj, 1e-7),
                   tol_coef=max(base.tol_coef, 1e-6))


def _base_cfg(cfg: SolveConfig | None) -> SolveConfig:
    return cfg if cfg is not None else SolveConfig()


def _retry_cfg(cfg: SolveConfig | None) -> SolveConfig:
    base = _base_cfg(cfg)
    return replace(base, max_outer=5 * base.max_outer)


def _fold_prepare(d: Dataset, train_idx, fold_standardize: bool):
    """Training subset plus the fold's own standardization (or None).

    With fold standardization on, fold fits run on the fold-standardized
    scale and their coefficients are mapped back to the ambient scale, so
    held-out losses are evaluated with the training fold's parameters and
    no scale information leaks from the validation rows."""
    if len(train_idx) == d.n:
        return d, None
    sub = d.subset(train_idx)
    if not fold_standardize:
        return sub, None
    return standardize(sub)


def fit_ps_cv(
    d: Dataset,
    t: int | None,
    method: str,
    constraint: str = "one_to_zero",
    reference: int = 0,
    seed=0,
    cfg: SolveConfig | None = None,
    selection: str = "min",
    fold_standardize: bool = False,
) -> tuple[PSModel, CVPath]:
    """Cross-validated propensity fit (method "rcal" requires a target t)."""
    loss = "cal" if method == "rcal" else "ml"
    lam_star = lambda_star_ps(d, t, loss, constraint, reference)
    grid = lambda_grid(lam_star)

    prepared: dict = {}
    evaluators: dict = {}

    def fit(train_idx, lam, warm, fold=None, cfg_use=None):
        if fold not in prepared:
            prepared[fold] = _fold_prepare(d, train_idx, fold_standardize)
        sub, std = prepared[fold]
        if cfg_use is None:
            cfg_use = cfg if fold is None else _fold_cfg(cfg)
        init = warm.coef if warm is not None else None
        if std is not None and init is not None:
            init = std.standardize_coef(init)
        if method == "rcal":
            model = fit_rcal_ps(sub, t, lam, constraint, cfg_use, init=init)
        else:
            model = fit_rml_ps(sub, lam, constraint, reference, cfg_use, init=init)
        if std is not None:
            model.coef = std.destandardize_coef(model.coef)
        return model

    def evaluate(model, val_idx, fold=None):
        if fold not in evaluators:
            evaluators[fold] = ps_adapter(d.view(val_idx), loss, t, constraint,
                                          reference)
        adapter = evaluators[fold]
        cols = getattr(adapter, "cols", slice(None))
        return adapter.eval(model.coef[:, cols])

    path = cv5(d, grid, fit, evaluate, seed)
    model = None
    all_rows = np.arange(d.n)
    sel = _selected_index(path, selection)
    for i in range(sel + 1):
        model = fit(all_rows, float(grid[i]), model)
    if not model.result.converged:
        model = fit(all_rows, float(grid[sel]), model, cfg_use=_retry_cfg(cfg))
    return model, path


def fit_or_cv(
    d: Dataset,
    t: int,
    method: str,
    link: str = "identity",
    ps: PSModel | None = None,
    seed=0,
    cfg: SolveConfig | None = None,
    selection: str = "min",
    groups=None,
    fold_standardize: bool = False,
) -> tuple[ORModel, object]:
    """Cross-validated outcome fit.

    ``rwl`` fits the per-copy weighted regression for target t with the
    propensity model held fixed.  ``rmls`` runs one path per treatment
    group (restricted to ``groups`` when given); ``rmlg`` one joint path.
    """
    all_rows = np.arange(d.n)
    if method == "rwl":
        grid = lambda_grid(lambda_star_or(d, "rwl", link, t=t, ps=ps))
        probs_full = predict_probs(ps, d)

        prepared: dict = {}
        evaluators: dict = {}

        def fit(train_idx, lam, warm, fold=None, cfg_use=None):
            if fold not in prepared:
                prepared[fold] = _fold_prepare(d, train_idx, fold_standardize)
            sub, std = prepared[fold]
            if cfg_use is None:
                cfg_use = cfg if fold is None else _fold_cfg(cfg)
            init = warm.coef if warm is not None else None
            if std is not None and init is not None:
                init = std.standardize_coef(init)
            model = fit_rwl(sub, t, _rescale_ps(ps, std), lam, link, cfg_use,
                            init=init)
            if std is not None:
                model.coef = std.destandardize_coef(model.coef)
            return model

        def evaluate(model, val_idx, fold=None):
            if fold not in evaluators:
                evaluators[fold] = or_adapter(d.view(val_idx), "rwl", link, t=t,
                                              probs=probs_full[val_idx])
            return evaluators[fold].eval(model.coef)

        path = cv5(d, grid, fit, evaluate, seed)
        model = None
        sel = _selected_index(path, selection)
        for i in range(sel + 1):
            model = fit(all_rows, float(grid[i]), model)
        if not model.results[0].converged:
            model = fit(all_rows, float(grid[sel]), model, cfg_use=_retry_cfg(cfg))
        return model, path

    if method == "rmls":
        groups = list(range(d.k)) if groups is None else list(groups)
        stars = lambda_star_or(d, "rmls", link)
        coef = np.zeros((d.p + 1, d.k))
        penalties = [np.nan] * d.k
        paths: dict = {}
        results = []
        for g in groups:
            grid = lambda_grid(float(stars[g]))

            last_result = None
            prepared: dict = {}
            fitters: dict = {}
            evaluators: dict = {}

            def fit(train_idx, lam, warm, g=g, fold=None, cfg_use=None):
                nonlocal last_result
                if fold not in prepared:
                    prepared[fold] = _fold_prepare(d, train_idx, fold_standardize)
                sub, std = prepared[fold]
                if cfg_use is None:
                    cfg_use = cfg if fold is None else _fold_cfg(cfg)
                if fold not in fitters:
                    fitters[fold] = or_adapter(sub, "rmls", link, t=g)
                adapter = fitters[fold]
                init = warm if warm is not None else np.zeros((d.p + 1, 1))
                if std is not None and warm is not None:
                    init = std.standardize_coef(init)
                result = solve(adapter, init, _cfg(cfg_use, lam))
                last_result = result
                out = result.coef
                if std is not None:
                    out = std.destandardize_coef(out)
                return out

            def evaluate(column, val_idx, g=g, fold=None):
                if fold not in evaluators:
                    evaluators[fold] = or_adapter(d.view(val_idx), "rmls", link, t=g)
                return evaluators[fold].eval(column)

            path = cv5(d, grid, fit, evaluate, _child_seed(seed, g))
            column = None
            sel = _selected_index(path, selection)
            for i in range(sel + 1):
                column = fit(all_rows, float(grid[i]), column)
            if not last_result.converged:
                column = fit(all_rows, float(grid[sel]), column,
                             cfg_use=_retry_cfg(cfg))
            coef[:, g] = column[:, 0]
            penalties[g] = float(grid[sel])
            paths[g] = path
            results.append(last_result)
        model = ORModel(coef=coef, method="rmls", link=link,
                        penalty=tuple(penalties), results=tuple(results))
        return model, paths

    if method == "rmlg":
        grid = lambda_grid(lambda_star_or(d, "rmlg", link))

        prepared: dict = {}
        evaluators: dict = {}

        def fit(train_idx, lam, warm, fold=None, cfg_use=None):
            if fold not in prepared:
                prepared[fold] = _fold_prepare(d, train_idx, fold_standardize)
            sub, std = prepared[fold]
            if cfg_use is None:
                cfg_use = cfg if fold is None else _fold_cfg(cfg)
            init = warm.coef if warm is not None else None
            if std is not None and init is not None:
                init = std.standardize_coef(init)
            model = fit_rmlg(sub, lam, link, cfg_use, init=init)
            if std is not None:
                model.coef = std.destandardize_coef(model.coef)
            return model

        def evaluate(model, val_idx, fold=None):
            if fold not in evaluators:
                evaluators[fold] = or_adapter(d.view(val_idx), "rmlg", link)
            return evaluators[fold].eval(model.coef)

        path = cv5(d, grid, fit, evaluate, seed)
        model = None
        sel = _selected_index(path, selection)
        for i in range(sel + 1):
            model = fit(all_rows, float(grid[i]), model)
        if not model.results[0].converged:
            model = fit(all_rows, float(grid[sel]), model, cfg_use=_retry_cfg(cfg))
        return model, path

    raise ValueError(f"unknown outcome method {method!r}")


def _cfg(cfg: SolveConfig | None, penalty: float) -> SolveConfig:
    return SolveConfig(penalty=penalty) if cfg is None else replace(cfg, penalty=penalty)


def _rescale_ps(ps: PSModel, std) -> PSModel:
    """Propensity model expressed on a fold's standardized scale (fitted
    probabilities are scale-invariant; only the coefficient basis moves)."""
    if std is None:
        return ps
    return replace_ps_coef(ps, std.standardize_coef(ps.coef))


def replace_ps_coef(ps: PSModel, coef) -> PSModel:
    out = PSModel(coef=coef, constraint=ps.constraint, reference=ps.reference,
                  method=ps.method, target=ps.target, penalty=ps.penalty,
                  result=ps.result)
    return out


@dataclass
class PipelineResult:
    report: EstimateReport
    ps: PSModel
    or_model: ORModel
    ps_path: CVPath | None
    or_path: object
    diagnostics: BalanceReport


def estimate_target(
    d: Dataset,
    t: int,
    method: str = "rcal",
    link: str = "identity",
    constraint: str = "one_to_zero",
    seed=0,
    cfg: SolveConfig | None = None,
    selection: str = "min",
    shared_ps: tuple | None = None,
    fold_standardize: bool = False,
) -> PipelineResult:
    """Full pipeline for one target: propensity fit, outcome fit, augmented
    IPW estimate and diagnostics.  ``shared_ps`` carries a pre-computed
    likelihood propensity fit for the rml methods."""
    if method == "rcal":
        ps, ps_path = fit_ps_cv(d, t, "rcal", constraint, seed=_child_seed(seed, 1, t),
                                cfg=cfg, selection=selection,
                                fold_standardize=fold_standardize)
        or_model, or_path = fit_or_cv(d, t, "rwl", link, ps,
                                      seed=_child_seed(seed, 2, t), cfg=cfg,
                                      selection=selection,
                                      fold_standardize=fold_standardize)
    elif method in ("rmls", "rmlg"):
        if shared_ps is not None:
            ps, ps_path = shared_ps
        else:
            ps, ps_path = fit_ps_cv(d, None, "rml", constraint,
                                    seed=_child_seed(seed, 1), cfg=cfg,
                                    selection=selection,
                                    fold_standardize=fold_standardize)
        or_method = "rmls" if method == "rmls" else "rmlg"
        or_model, or_path = fit_or_cv(
            d, t, or_method, link, seed=_child_seed(seed, 2, t), cfg=cfg,
            selection=selection, groups=[t] if method == "rmls" else None,
            fold_standardize=fold_standardize,
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    report = aipw_mu(d, or_model, ps, t)
    diagnostics = verify_fit(d, ps, or_model, report)
    return PipelineResult(report=report, ps=ps, or_model=or_model,
                          ps_path=ps_path, or_path=or_path,
                          diagnostics=diagnostics)


def estimate_all(
    d: Dataset,
    targets,
    method: str = "rcal",
    link: str = "identity",
    constraint: str = "one_to_zero",
    seed=0,
    cfg: SolveConfig | None = None,
    selection: str = "min",
    fold_standardize: bool = False,
) -> list[PipelineResult]:
    """Pipeline for several targets; rml methods reuse one propensity fit."""
    shared = None
    if method in ("rmls", "rmlg"):
        shared = fit_ps_cv(d, None, "rml", constraint, seed=_child_seed(seed, 1),
                           cfg=cfg, selection=selection,
                           fold_standardize=fold_standardize)
    out = []
    for t in targets:
        out.append(
            estimate_target(d, t, method, link, constraint, seed, cfg,
                            selection, shared_ps=shared,
                            fold_standardize=fold_standardize)
        )
    return out
