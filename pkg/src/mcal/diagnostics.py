"""Post-fit diagnostics: covariate balance, weight dispersion and the
stationarity identities a converged calibrated pipeline must satisfy.

All diagnostics are pure functions of (data, fitted probabilities,
coefficients); rerunning them yields identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, treatment_indicators
from .estimate import EstimateReport
from .outcome import ORModel
from .propensity import PSModel, predict_probs


def mascd(d: Dataset, probs: np.ndarray, t: int) -> float:
    """Maximum absolute standardized calibration difference for group t.

    Compares the inverse-probability weighted mean of each regressor in
    group t (weights normalized to sum to one) with its overall sample
    mean, standardized by the sample standard deviation (divisor n).
    """
    if d.p == 0:
        return 0.0
    rt = (d.t == t).astype(float)
    w = rt / probs[:, t]
    fj = d.f[:, 1:]
    weighted = (w[:, None] * fj).mean(axis=0) / w.mean()
    overall = fj.mean(axis=0)
    scale = fj.std(axis=0)  # divisor n
    return float(np.abs((weighted - overall) / scale).max())


def rv(d: Dataset, probs: np.ndarray, t: int) -> float:
    """Relative variance of the inverse-probability weights within group t:
    within-group variance of 1/pi over the squared within-group mean."""
    w = 1.0 / probs[d.t == t, t]
    return float(w.var() / w.mean() ** 2)


@dataclass
class Check:
    name: str
    value: float
    bound: float | None
    passed: bool | None  # None: informational only


@dataclass
class BalanceReport:
    """Diagnostic bundle for one fitted pipeline.

    ``balance_bound`` is sqrt(K-1) * lambda1 under the one-to-zero
    constraint and lambda1 under sum-to-zero; converged calibrated fits
    keep every per-regressor balance residual within it.
    """

    target: int
    mascd: float
    rv: float
    weight_sum_residual: float
    balance_bound: float
    balance_residuals: np.ndarray
    checks: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.passed is not None)


def _solver_tolerance(ps: PSModel) -> float:
    # KKT residuals inherit solver precision: 100 x tol_coef scaled by the
    # final curvature bound is a conservative ceiling
    return 100.0 * 1e-8


def verify_fit(
    d: Dataset,
    ps: PSModel,
    or_model: ORModel | None,
    report: EstimateReport | None,
    tol: float | None = None,
) -> BalanceReport:
    """Compute balance and stationarity residuals for a fitted pipeline.

    For calibrated (RCAL) propensity fits the weight-sum and per-regressor
    balance residuals carry pass/fail flags against solver-derived bounds;
    for likelihood fits the same numbers are reported informationally
    (likelihood fits satisfy score equations, not calibration equations).
    """
    t = report.target if report is not None else ps.target
    if t is None:
        raise ValueError("no target treatment: supply a report or a calibrated fit")
    tol = _solver_tolerance(ps) if tol is None else tol
    probs = predict_probs(ps, d)
    rt = (d.t == t).astype(float)
    w = rt / probs[:, t]

    weight_sum_residual = float(abs(w.mean() - 1.0))
    if d.p:
        balance_residuals = np.abs(
            (w[:, None] * d.f[:, 1:]).mean(axis=0) - d.f[:, 1:].mean(axis=0)
        )
    else:
        balance_residuals = np.zeros(0)
    bound_factor = np.sqrt(d.k - 1) if ps.constraint == "one_to_zero" else 1.0
    balance_bound = float(bound_factor * ps.penalty)

    calibrated = ps.method == "rcal"
    checks = [
        Check(
            "weight_sum", weight_sum_residual, tol,
            weight_sum_residual <= tol if calibrated else None,
        ),
        Check(
            "covariate_balance",
            float(balance_residuals.max()) if balance_residuals.size else 0.0,
            balance_bound + tol,
            bool((balance_residuals <= balance_bound + tol).all())
            if calibrated else None,
        ),
    ]

    if or_model is not None and or_model.method == "rwl":
        r = treatment_indicators(d)
        cols = list(or_model.copies)
        omega = probs[:, cols] / probs[:, [t]]
        resid = d.y[:, None] - or_model.copy_means(d)
        ortho = np.abs((rt[:, None] * omega * resid).mean(axis=0))
        checks.append(
            Check("weighted_orthogonality", float(ortho.max()), tol,
                  bool((ortho <= tol).all()))
        )

    if report is not None:
        r = treatment_indicators(d)
        shares = r.mean(axis=0)
        recomposed = float((rt * d.y).mean()) + sum(
            report.nu_hat[k] * shares[k] for k in report.nu_hat
        )
        decomp = abs(report.mu_hat - recomposed)
        checks.append(Check("decomposition", decomp, 1e-10, decomp <= 1e-10))
        if or_model is not None and or_model.method == "rwl":
            mhat = or_model.copy_means(d)
            pool = [d.y[d.t == t]]
            for i, k in enumerate(or_model.copies):
                pool.append(mhat[d.t == k, i])
            pool = np.concatenate(pool)
            inside = pool.min() - 1e-10 <= report.mu_hat <= pool.max() + 1e-10
            checks.append(
                Check("boundedness", report.mu_hat, None,
                      bool(inside) if calibrated else None)
            )

    return BalanceReport(
        target=t,
        mascd=mascd(d, probs, t),
        rv=rv(d, probs, t),
        weight_sum_residual=weight_sum_residual,
        balance_bound=balance_bound,
        balance_residuals=balance_residuals,
        checks=checks,
    )
