"""Augmented IPW point estimates, variance estimates and Wald intervals.

For a target treatment t the per-observation influence term is

    phi_t = R_t * Y + sum_{k != t} phi_t^(k),
    phi_t^(k) = R_t * Y * w_k - (R_t * w_k - R_k) * m_k(X),

where ``w_k`` is the fitted probability ratio ``pi(k, X) / pi(t, X)`` and
``m_k`` the outcome prediction attached to k (per-copy predictions for
weighted-likelihood fits, the single prediction m(t, X) for likelihood
fits, in which case the sum reduces exactly to the classical augmented IPW
form).  The treatment mean estimate is the sample average of phi_t; the
ratio ``mean(phi_t^(k)) / mean(R_k)`` estimates the mean potential outcome
under t within group k, giving ATT estimates from the same fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .data import Dataset, treatment_indicators
from .errors import NumericalError
from .outcome import ORModel
from .propensity import PSModel, predict_probs

EXTREME_PROB = 1e-10


def wald_ci(estimate: float, variance: float, n: int, level: float) -> tuple[float, float]:
    """Normal-theory interval ``estimate +/- z * sqrt(variance / n)``."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    z = ndtri(0.5 + level / 2.0)
    half = z * np.sqrt(variance / n)
    return (estimate - half, estimate + half)


@dataclass
class EstimateReport:
    """Estimates for one target treatment.

    ``nu_hat[k]`` estimates the mean potential outcome under the target
    within treatment group k; ``u_hat[k]`` is its variance estimate.
    ``influence`` holds the per-observation phi values, so
    ``mu_hat == influence.mean()`` and ``v_hat`` is its centered second
    moment.
    """

    target: int
    mu_hat: float
    v_hat: float
    nu_hat: dict
    u_hat: dict
    method: str
    influence: np.ndarray
    n: int

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        return wald_ci(self.mu_hat, self.v_hat, self.n, level)

    def nu_ci(self, k: int, level: float = 0.95) -> tuple[float, float]:
        return wald_ci(self.nu_hat[k], self.u_hat[k], self.n, level)


def group_mean(d: Dataset, k: int) -> float:
    """Sample mean of the outcome within treatment group k."""
    mask = d.t == k
    return float(d.y[mask].mean())


def _influence_terms(d: Dataset, or_model: ORModel, ps_model: PSModel, t: int):
    """Per-copy influence matrix phi^(k) (n x (K-1)) and the column labels."""
    probs = predict_probs(ps_model, d)
    low = probs[:, t] < EXTREME_PROB
    if low.any():
        i = int(np.flatnonzero(low)[0])
        raise NumericalError(
            f"extreme weight: fitted probability of treatment {t} below "
            f"{EXTREME_PROB:g} at row {i}"
        )
    cols = [k for k in range(d.k) if k != t]
    r = treatment_indicators(d)
    rt = r[:, t]
    omega = probs[:, cols] / probs[:, [t]]
    if or_model.method == "rwl":
        if or_model.target != t or tuple(or_model.copies) != tuple(cols):
            raise ValueError("outcome model copies do not match the target")
        mhat = or_model.copy_means(d)
    else:
        mhat = np.repeat(or_model.mean(d, t)[:, None], len(cols), axis=1)
    phik = (rt * d.y)[:, None] * omega - (rt[:, None] * omega - r[:, cols]) * mhat
    return phik, cols, rt


def aipw_mu(d: Dataset, or_model: ORModel, ps_model: PSModel, t: int) -> EstimateReport:
    """Augmented IPW estimate of the treatment mean for target t.

    Raises
    ------
    NumericalError
        If a fitted target probability falls below 1e-10 (truncating would
        silently change the estimand).
    """
    phik, cols, rt = _influence_terms(d, or_model, ps_model, t)
    influence = rt * d.y + phik.sum(axis=1)
    mu = float(influence.mean())
    v = float(np.mean((influence - mu) ** 2))
    r = treatment_indicators(d)
    nu_hat, u_hat = {}, {}
    for i, k in enumerate(cols):
        share = float(r[:, k].mean())
        nu = float(phik[:, i].mean()) / share
        u = float(np.mean((phik[:, i] - r[:, k] * nu) ** 2)) / share**2
        nu_hat[k], u_hat[k] = nu, u
    return EstimateReport(
        target=t, mu_hat=mu, v_hat=v, nu_hat=nu_hat, u_hat=u_hat,
        method=or_model.method, influence=influence, n=d.n,
    )


def aipw_nu(d: Dataset, or_model: ORModel, ps_model: PSModel, t: int, k: int):
    """ATT building block: estimate of E(Y^(t) | T = k) with its variance.

    For k == t the raw group mean applies instead (see :func:`group_mean`).
    """
    if k == t:
        raise ValueError("use group_mean for the within-group mean (k == t)")
    phik, cols, _ = _influence_terms(d, or_model, ps_model, t)
    i = cols.index(k)
    rk = (d.t == k).astype(float)
    share = float(rk.mean())
    nu = float(phik[:, i].mean()) / share
    u = float(np.mean((phik[:, i] - rk * nu) ** 2)) / share**2
    return nu, u


@dataclass
class AteContrast:
    diff: float
    variance: float
    n: int

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        return wald_ci(self.diff, self.variance, self.n, level)


def ate_contrast(report_a: EstimateReport, report_b: EstimateReport) -> AteContrast:
    """Difference of two treatment means with the variance of the difference
    of their influence functions (reports must come from the same sample)."""
    if report_a.n != report_b.n:
        raise ValueError("reports come from samples of different sizes")
    da = report_a.influence - report_a.mu_hat
    db = report_b.influence - report_b.mu_hat
    return AteContrast(
        diff=report_a.mu_hat - report_b.mu_hat,
        variance=float(np.mean((da - db) ** 2)),
        n=report_a.n,
    )
