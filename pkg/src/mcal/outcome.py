"""Outcome-regression fitting.

Three penalized fitters for GLM outcome models ``E(Y | T = t, X) =
psi(coef' f(X))``:

* :func:`fit_rwl`: K - 1 coefficient copies for a fixed target group t,
  each weighted by a fitted probability ratio from a propensity model, with
  a group-Lasso penalty across the copies.
* :func:`fit_rmls`: separate Lasso likelihood fits per treatment group.
* :func:`fit_rmlg`: joint likelihood fit with a group-Lasso penalty across
  the K per-treatment coefficients of each regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, treatment_indicators
from .engine import SolveConfig, SolveResult, solve
from .propensity import PSModel, _gram_of, predict_probs


@dataclass(frozen=True)
class Link:
    name: str
    inv: callable        # psi: linear predictor -> mean
    integral: callable   # Psi with Psi' = psi
    deriv: callable      # psi2 = psi'


def _expit(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


LINKS = {
    "identity": Link("identity", lambda u: u, lambda u: 0.5 * u * u,
                     lambda u: np.ones_like(u)),
    "logit": Link("logit", _expit, lambda u: np.logaddexp(0.0, u),
                  lambda u: _expit(u) * (1.0 - _expit(u))),
}


@dataclass
class ORModel:
    """Fitted outcome-regression model.

    For ``method == "rwl"`` the coefficient matrix has one column per
    non-target treatment (labels in ``copies``); for ``rmls``/``rmlg`` one
    column per treatment.
    """

    coef: np.ndarray
    method: str
    link: str
    penalty: object
    target: int | None = None
    copies: tuple = ()
    results: tuple = ()

    def copy_means(self, d: Dataset) -> np.ndarray:
        """RWL predicted means, one column per copy k != target."""
        if self.method != "rwl":
            raise ValueError("copy_means is defined for RWL models only")
        return LINKS[self.link].inv(d.f @ self.coef)

    def mean(self, d: Dataset, t: int) -> np.ndarray:
        """Predicted outcome mean m(t, X) for likelihood-based models."""
        if self.method == "rwl":
            raise ValueError("RWL models predict per-copy means; use copy_means")
        if self.method == "rmls" and not np.isfinite(np.asarray(self.penalty)[t]):
            raise ValueError(f"treatment group {t} was not fitted")
        return LINKS[self.link].inv(d.f @ self.coef[:, t])


class _WeightedGLM:
    """Combined weighted likelihood loss over the K - 1 copies; m = K - 1."""

    def __init__(self, d: Dataset, t: int, probs: np.ndarray, link: Link):
        self.design = d.f
        self.gram = _gram_of(d)
        self.y = d.y
        self.link = link
        self.cols = [k for k in range(d.k) if k != t]
        r = treatment_indicators(d)
        rt = r[:, t]
        self.weights = rt[:, None] * probs[:, self.cols] / probs[:, [t]]
        self.probs_off = probs[:, self.cols]

    def eval(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        terms = self.weights * (-self.y[:, None] * h + self.link.integral(h))
        val = float(np.mean(terms.sum(axis=1)))
        return val if np.isfinite(val) else np.inf

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        h = self.design @ coef
        return self.weights * (self.link.inv(h) - self.y[:, None])

    def majorizer_bound(self, coef: np.ndarray) -> float:
        # Fisher-scored curvature: fitted probability (not the probability
        # ratio) times the GLM variance function, so small target-group
        # probabilities do not inflate the bound
        h = self.design @ coef
        return max(float((self.probs_off * self.link.deriv(h)).max()), 1e-12)

    def fisher(self, coef: np.ndarray):
        h = self.design @ coef
        g = self.weights * (self.link.inv(h) - self.y[:, None])
        b = max(float((self.probs_off * self.link.deriv(h)).max()), 1e-12)
        return g, b


class _GLMLasso:
    """Likelihood loss of a single treatment group; m = 1."""

    def __init__(self, d: Dataset, t: int, link: Link):
        self.design = d.f
        self.gram = _gram_of(d)
        self.y = d.y
        self.link = link
        self.rt = (d.t == t).astype(float)

    def eval(self, coef: np.ndarray) -> float:
        h = (self.design @ coef)[:, 0]
        val = float(np.mean(self.rt * (-self.y * h + self.link.integral(h))))
        return val if np.isfinite(val) else np.inf

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        h = (self.design @ coef)[:, 0]
        return (self.rt * (self.link.inv(h) - self.y))[:, None]

    def majorizer_bound(self, coef: np.ndarray) -> float:
        h = (self.design @ coef)[:, 0]
        return max(float((self.rt * self.link.deriv(h)).max()), 1e-12)

    def fisher(self, coef: np.ndarray):
        h = (self.design @ coef)[:, 0]
        g = (self.rt * (self.link.inv(h) - self.y))[:, None]
        b = max(float((self.rt * self.link.deriv(h)).max()), 1e-12)
        return g, b


class _GroupGLM:
    """Sum of per-treatment likelihood losses; m = K."""

    def __init__(self, d: Dataset, link: Link):
        self.design = d.f
        self.gram = _gram_of(d)
        self.y = d.y
        self.link = link
        self.r = treatment_indicators(d)

    def eval(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        terms = self.r * (-self.y[:, None] * h + self.link.integral(h))
        val = float(np.mean(terms.sum(axis=1)))
        return val if np.isfinite(val) else np.inf

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        h = self.design @ coef
        return self.r * (self.link.inv(h) - self.y[:, None])

    def majorizer_bound(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        return max(float((self.r * self.link.deriv(h)).max()), 1e-12)

    def fisher(self, coef: np.ndarray):
        h = self.design @ coef
        g = self.r * (self.link.inv(h) - self.y[:, None])
        b = max(float((self.r * self.link.deriv(h)).max()), 1e-12)
        return g, b


def _check_link(link: str, y: np.ndarray) -> Link:
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}")
    if link == "logit" and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("logit link requires outcomes in [0, 1]")
    return LINKS[link]


def or_adapter(d: Dataset, method: str, link: str, t: int | None = None,
               probs: np.ndarray | None = None):
    lk = _check_link(link, d.y)
    if method == "rwl":
        return _WeightedGLM(d, t, probs, lk)
    if method == "rmls":
        return _GLMLasso(d, t, lk)
    if method == "rmlg":
        return _GroupGLM(d, lk)
    raise ValueError(f"unknown method {method!r}")


def fit_rwl(
    d: Dataset,
    t: int,
    ps: PSModel,
    penalty: float,
    link: str = "identity",
    cfg: SolveConfig | None = None,
    init: np.ndarray | None = None,
) -> ORModel:
    """Weighted-likelihood outcome fit with one coefficient copy per k != t.

    The probability-ratio weights are computed once from the fixed ``ps``
    model; they are data, not parameters, during this fit.
    """
    if ps.target is not None and ps.target != t:
        raise ValueError(f"propensity model was fitted for target {ps.target}, not {t}")
    probs = predict_probs(ps, d)
    adapter = or_adapter(d, "rwl", link, t=t, probs=probs)
    start = np.zeros((d.p + 1, d.k - 1)) if init is None else np.asarray(init, float)
    result = solve(adapter, start, _cfg(cfg, penalty))
    return ORModel(
        coef=result.coef, method="rwl", link=link, penalty=penalty,
        target=t, copies=tuple(adapter.cols), results=(result,),
    )


def fit_rmls(
    d: Dataset,
    penalties,
    link: str = "identity",
    cfg: SolveConfig | None = None,
) -> ORModel:
    """Separate Lasso GLM fit per treatment group (the group penalty on a
    single column reduces to the absolute value)."""
    penalties = np.broadcast_to(np.asarray(penalties, dtype=float), (d.k,))
    coef = np.zeros((d.p + 1, d.k))
    results = []
    for t in range(d.k):
        adapter = or_adapter(d, "rmls", link, t=t)
        result = solve(adapter, np.zeros((d.p + 1, 1)), _cfg(cfg, float(penalties[t])))
        coef[:, t] = result.coef[:, 0]
        results.append(result)
    return ORModel(
        coef=coef, method="rmls", link=link, penalty=tuple(penalties),
        results=tuple(results),
    )


def fit_rmlg(
    d: Dataset,
    penalty: float,
    link: str = "identity",
    cfg: SolveConfig | None = None,
    init: np.ndarray | None = None,
) -> ORModel:
    """Joint likelihood fit with a group penalty across the K coefficients
    of each regressor."""
    adapter = or_adapter(d, "rmlg", link)
    start = np.zeros((d.p + 1, d.k)) if init is None else np.asarray(init, float)
    result = solve(adapter, start, _cfg(cfg, penalty))
    return ORModel(
        coef=result.coef, method="rmlg", link=link, penalty=penalty,
        results=(result,),
    )


def _cfg(cfg: SolveConfig | None, penalty: float) -> SolveConfig:
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    return SolveConfig(penalty=penalty) if cfg is None else replace(cfg, penalty=penalty)
