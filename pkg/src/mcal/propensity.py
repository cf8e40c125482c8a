"""Propensity-score fitting for multi-valued treatments.

Two group-Lasso penalized fitters for the multi-class logistic model
``P(T = k | X) = softmax_k(coef[:, k]' f(X))``:

* :func:`fit_rcal_ps` minimizes the calibration loss whose stationarity
  conditions match probability-ratio weighted covariate means in the target
  treatment group with the simple means in every other group (one fit per
  target treatment).
* :func:`fit_rml_ps` minimizes the multinomial likelihood loss (a single
  fit reused across targets).

Both support the one-to-zero identification constraint (a reference column
fixed at zero) and the sum-to-zero constraint (columns summing to zero;
only the intercepts need explicit recentring, penalized rows satisfy the
constraint automatically at the minimum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, treatment_indicators
from .engine import SolveConfig, SolveResult, solve
from .errors import SeparationError

PREDICTOR_CAP = 700.0  # exp() overflows near 709; beyond this we call it separation


def _stable_softmax(h: np.ndarray) -> np.ndarray:
    h = h - h.max(axis=1, keepdims=True)
    e = np.exp(h)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class PSModel:
    """Fitted propensity-score model.

    ``coef`` is the full (p + 1) x K matrix: the reference column is
    identically zero under the one-to-zero constraint, rows sum to zero
    under the sum-to-zero constraint.  ``target`` is the treatment the
    calibration loss was built for (None for likelihood fits).
    """

    coef: np.ndarray
    constraint: str
    reference: int | None
    method: str
    target: int | None
    penalty: float
    result: SolveResult
    fitted_probs: np.ndarray | None = None


def predict_probs(model: PSModel, d: Dataset) -> np.ndarray:
    """Fitted class probabilities, rows summing to 1 (max-subtracted softmax)."""
    if model.coef.shape[0] != d.f.shape[1]:
        raise ValueError("coefficient rows do not match design columns")
    return _stable_softmax(d.f @ model.coef)


def cal_loss(d: Dataset, coef: np.ndarray, t: int) -> float:
    """Calibration loss of a full (p + 1) x K coefficient matrix for target t.

    Raises
    ------
    SeparationError
        If any predictor difference exceeds 700 in magnitude.
    """
    h = d.f @ coef
    diff = h - h[:, [t]]
    if np.abs(diff).max() > PREDICTOR_CAP:
        raise SeparationError(
            "separation suspected: linear predictor difference exceeds 700"
        )
    r = treatment_indicators(d)
    rt = r[:, t]
    expterm = rt * (np.exp(diff).sum(axis=1) - 1.0)  # exp(0) for k = t removed
    linterm = (r * diff).sum(axis=1)  # diff[:, t] = 0 so k = t adds nothing
    return float(np.mean(expterm - linterm))


def ml_loss(d: Dataset, coef: np.ndarray) -> float:
    """Average negative multinomial log-likelihood of a full coefficient matrix."""
    h = d.f @ coef
    hmax = h.max(axis=1)
    lse = hmax + np.log(np.exp(h - hmax[:, None]).sum(axis=1))
    return float(np.mean(lse - h[np.arange(d.n), d.t]))


def _gram_of(d) -> np.ndarray | None:
    g = getattr(d, "gram", None)
    return g() if callable(g) else None


class _CalOneToZero:
    """Calibration loss with the target column fixed at zero; m = K - 1."""

    def __init__(self, d: Dataset, t: int):
        self.design = d.f
        self.gram = _gram_of(d)
        self.t = t
        self.cols = [k for k in range(d.k) if k != t]
        r = treatment_indicators(d)
        self.rt = r[:, t]
        self.rk = r[:, self.cols]

    def eval(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        if np.abs(h).max() > PREDICTOR_CAP:
            return np.inf
        return float(
            np.mean(self.rt * np.exp(h).sum(axis=1) - (self.rk * h).sum(axis=1))
        )

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        h = self.design @ coef
        return self.rt[:, None] * np.exp(h) - self.rk

    def majorizer_bound(self, coef: np.ndarray) -> float:
        # largest off-target fitted probability over the sample
        h = self.design @ coef
        e = np.exp(h - np.maximum(h.max(axis=1, keepdims=True), 0.0))
        denom = e.sum(axis=1) + np.exp(-np.maximum(h.max(axis=1), 0.0))
        return max(float((e / denom[:, None]).max()), 1e-12)

    def fisher(self, coef: np.ndarray):
        """Gradient signals and curvature bound from one shared predictor
        evaluation (valid at accepted iterates, where |h| <= 700)."""
        h = self.design @ coef
        e = np.exp(h)
        g = self.rt[:, None] * e - self.rk
        b = (e.max(axis=1) / (1.0 + e.sum(axis=1))).max()
        return g, max(float(b), 1e-12)


class _CalSumToZero:
    """Calibration loss over all K columns with intercepts recentred; m = K."""

    def __init__(self, d: Dataset, t: int):
        self.design = d.f
        self.gram = _gram_of(d)
        self.t = t
        self.r = treatment_indicators(d)
        self.rt = self.r[:, t]

    def eval(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        diff = h - h[:, [self.t]]
        if np.abs(diff).max() > PREDICTOR_CAP:
            return np.inf
        expterm = self.rt * (np.exp(diff).sum(axis=1) - 1.0)
        return float(np.mean(expterm - (self.r * diff).sum(axis=1)))

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        probs = _stable_softmax(self.design @ coef)
        g = self.rt[:, None] * (probs / probs[:, [self.t]]) - self.r
        g[:, self.t] = 1.0 - self.rt / probs[:, self.t]
        return g

    def majorizer_bound(self, coef: np.ndarray) -> float:
        probs = _stable_softmax(self.design @ coef)
        return max(float(2.0 * (1.0 - probs[:, self.t]).max()), 1e-12)

    def fisher(self, coef: np.ndarray):
        probs = _stable_softmax(self.design @ coef)
        g = self.rt[:, None] * (probs / probs[:, [self.t]]) - self.r
        g[:, self.t] = 1.0 - self.rt / probs[:, self.t]
        b = 2.0 * (1.0 - probs[:, self.t]).max()
        return g, max(float(b), 1e-12)

    def project(self, coef: np.ndarray) -> None:
        coef[0] -= coef[0].mean()


class _MultinomialOneToZero:
    """Multinomial likelihood loss with a zero reference column; m = K - 1."""

    def __init__(self, d: Dataset, reference: int):
        self.design = d.f
        self.gram = _gram_of(d)
        self.reference = reference
        self.cols = [k for k in range(d.k) if k != reference]
        r = treatment_indicators(d)
        self.rk = r[:, self.cols]
        self.k = d.k

    def _full(self, coef: np.ndarray) -> np.ndarray:
        h = np.zeros((self.design.shape[0], self.k))
        h[:, self.cols] = self.design @ coef
        return h

    def eval(self, coef: np.ndarray) -> float:
        h = self._full(coef)
        hmax = h.max(axis=1)
        lse = hmax + np.log(np.exp(h - hmax[:, None]).sum(axis=1))
        observed = (self.rk * h[:, self.cols]).sum(axis=1)
        return float(np.mean(lse - observed))

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        probs = _stable_softmax(self._full(coef))
        return probs[:, self.cols] - self.rk

    def majorizer_bound(self, coef: np.ndarray) -> float:
        return 0.5  # classical multinomial curvature bound

    def fisher(self, coef: np.ndarray):
        return self.pseudo_gradient(coef), 0.5


class _MultinomialSumToZero:
    """Multinomial likelihood loss over all K columns; m = K."""

    def __init__(self, d: Dataset):
        self.design = d.f
        self.gram = _gram_of(d)
        self.r = treatment_indicators(d)
        self.t_codes = d.t

    def eval(self, coef: np.ndarray) -> float:
        h = self.design @ coef
        hmax = h.max(axis=1)
        lse = hmax + np.log(np.exp(h - hmax[:, None]).sum(axis=1))
        return float(np.mean(lse - h[np.arange(h.shape[0]), self.t_codes]))

    def pseudo_gradient(self, coef: np.ndarray) -> np.ndarray:
        return _stable_softmax(self.design @ coef) - self.r

    def majorizer_bound(self, coef: np.ndarray) -> float:
        return 0.5

    def fisher(self, coef: np.ndarray):
        return self.pseudo_gradient(coef), 0.5

    def project(self, coef: np.ndarray) -> None:
        coef[0] -= coef[0].mean()


def _assemble_full(coef_reduced, k, cols):
    full = np.zeros((coef_reduced.shape[0], k))
    full[:, cols] = coef_reduced
    return full


def ps_adapter(d: Dataset, loss: str, t: int | None, constraint: str,
               reference: int | None = None):
    """Adapter factory shared by the fitters and the tuning module."""
    if constraint not in ("one_to_zero", "sum_to_zero"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if loss == "cal":
        if t is None:
            raise ValueError("calibration loss requires a target treatment")
        if constraint == "one_to_zero":
            return _CalOneToZero(d, t)
        return _CalSumToZero(d, t)
    if loss == "ml":
        if constraint == "one_to_zero":
            return _MultinomialOneToZero(d, 0 if reference is None else reference)
        return _MultinomialSumToZero(d)
    raise ValueError(f"unknown loss {loss!r}")


def fit_rcal_ps(
    d: Dataset,
    t: int,
    penalty: float,
    constraint: str = "one_to_zero",
    cfg: SolveConfig | None = None,
    init: np.ndarray | None = None,
) -> PSModel:
    """Group-Lasso penalized calibration fit of the propensity-score model
    for target treatment ``t``.

    Under the one-to-zero constraint the reference column is ``t`` itself.
    ``init`` may carry a full (p + 1) x K warm-start matrix.
    """
    if not 0 <= t < d.k:
        raise ValueError(f"target {t} outside 0..{d.k - 1}")
    cfg = _with_penalty(cfg, penalty)
    adapter = ps_adapter(d, "cal", t, constraint)
    if constraint == "one_to_zero":
        cols = adapter.cols
        start = np.zeros((d.p + 1, d.k - 1)) if init is None else init[:, cols]
        result = solve(adapter, start, cfg)
        full = _assemble_full(result.coef, d.k, cols)
    else:
        start = np.zeros((d.p + 1, d.k)) if init is None else init
        result = solve(adapter, start, cfg)
        full = result.coef
    model = PSModel(
        coef=full, constraint=constraint,
        reference=t if constraint == "one_to_zero" else None,
        method="rcal", target=t, penalty=penalty, result=result,
    )
    model.fitted_probs = predict_probs(model, d)
    return model


def fit_rml_ps(
    d: Dataset,
    penalty: float,
    constraint: str = "one_to_zero",
    reference: int = 0,
    cfg: SolveConfig | None = None,
    init: np.ndarray | None = None,
) -> PSModel:
    """Group-Lasso penalized multinomial likelihood fit of the propensity model."""
    cfg = _with_penalty(cfg, penalty)
    adapter = ps_adapter(d, "ml", None, constraint, reference)
    if constraint == "one_to_zero":
        cols = adapter.cols
        start = np.zeros((d.p + 1, d.k - 1)) if init is None else init[:, cols]
        result = solve(adapter, start, cfg)
        full = _assemble_full(result.coef, d.k, cols)
    else:
        start = np.zeros((d.p + 1, d.k)) if init is None else init
        result = solve(adapter, start, cfg)
        full = result.coef
    model = PSModel(
        coef=full, constraint=constraint,
        reference=reference if constraint == "one_to_zero" else None,
        method="rml", target=None, penalty=penalty, result=result,
    )
    model.fitted_probs = predict_probs(model, d)
    return model


def _with_penalty(cfg: SolveConfig | None, penalty: float) -> SolveConfig:
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    if cfg is None:
        return SolveConfig(penalty=penalty)
    from dataclasses import replace

    return replace(cfg, penalty=penalty)
