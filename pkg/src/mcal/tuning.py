"""Penalty grids, 5-fold cross-validation and lambda.min / lambda.1se selection.

The grid runs from the smallest penalty producing the all-zero penalized
solution, ``lambda*``, down two decades: ``{lambda* * 0.01**(j/20): j =
0..20}``.  ``lambda*`` is the largest gradient group norm of the loss at
its intercept-only optimum, which for the canonical losses here is
available in closed form from the empirical class frequencies and group
means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, treatment_indicators
from .errors import DataError
from .propensity import PSModel, predict_probs

GRID_SIZE = 21
N_FOLDS = 5


def lambda_grid(lambda_star: float) -> np.ndarray:
    return lambda_star * 0.01 ** (np.arange(GRID_SIZE) / 20.0)


def _max_group_norm(f: np.ndarray, g: np.ndarray) -> float:
    if f.shape[1] <= 1:
        return 0.0  # no penalized rows
    grad = f[:, 1:].T @ g / f.shape[0]
    return float(np.linalg.norm(grad, axis=1).max())


def lambda_star_ps(
    d: Dataset,
    t: int | None,
    loss: str = "cal",
    constraint: str = "one_to_zero",
    reference: int = 0,
) -> float:
    """Smallest penalty with an all-zero penalized propensity solution.

    Evaluates the loss gradient at the intercept-only optimum, where the
    fitted probabilities equal the empirical class frequencies.
    """
    freqs = d.group_counts() / d.n
    r = treatment_indicators(d)
    if loss == "cal":
        if t is None:
            raise ValueError("calibration loss requires a target treatment")
        rt = r[:, t]
        if constraint == "one_to_zero":
            cols = [k for k in range(d.k) if k != t]
            g = rt[:, None] * (freqs[cols] / freqs[t]) - r[:, cols]
        else:
            g = rt[:, None] * (freqs / freqs[t]) - r
            g[:, t] = 1.0 - rt / freqs[t]
    elif loss == "ml":
        if constraint == "one_to_zero":
            cols = [k for k in range(d.k) if k != reference]
            g = freqs[cols] - r[:, cols]
        else:
            g = freqs - r
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return _max_group_norm(d.f, g)


def lambda_star_or(
    d: Dataset,
    method: str,
    link: str = "identity",
    t: int | None = None,
    ps: PSModel | None = None,
) -> float | np.ndarray:
    """Top-of-grid penalty for the outcome fitters.

    At the intercept-only optimum of a canonical GLM the fitted mean equals
    the (weighted) group mean of the outcome, so the gradient signals are
    residuals against those means.  Returns one value per treatment for
    ``rmls``.
    """
    r = treatment_indicators(d)
    if method == "rwl":
        probs = predict_probs(ps, d)
        cols = [k for k in range(d.k) if k != t]
        w = r[:, [t]] * probs[:, cols] / probs[:, [t]]
        wmean = (w * d.y[:, None]).sum(axis=0) / w.sum(axis=0)
        g = w * (wmean[None, :] - d.y[:, None])
        return _max_group_norm(d.f, g)
    if method == "rmls":
        out = np.empty(d.k)
        for k in range(d.k):
            gmean = d.y[d.t == k].mean()
            g = (r[:, k] * (gmean - d.y))[:, None]
            out[k] = _max_group_norm(d.f, g)
        return out
    if method == "rmlg":
        gmeans = np.array([d.y[d.t == k].mean() for k in range(d.k)])
        g = r * (gmeans[None, :] - d.y[:, None])
        return _max_group_norm(d.f, g)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CVPath:
    """Cross-validation path over a descending penalty grid.

    ``fold_losses[s, i]`` is the held-out loss of fold s at grid[i];
    ``lambda_1se`` is the largest penalty whose mean CV loss is within one
    standard error of the minimum.
    """

    grid: np.ndarray
    fold_losses: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    index_min: int
    index_1se: int
    fold_assignment: np.ndarray


def fold_partition(t: np.ndarray, k: int, seed, n_folds: int = N_FOLDS,
                   max_retries: int = 10) -> np.ndarray:
    """Seeded random fold assignment such that every training complement
    contains every treatment level; falls back to treatment-stratified
    folds after ``max_retries`` random attempts."""
    n = t.shape[0]
    if n < 2 * n_folds:
        raise DataError(f"n = {n} too small for {n_folds}-fold cross-validation")
    rng = np.random.default_rng(seed)
    sizes = np.full(n_folds, n // n_folds)
    sizes[: n % n_folds] += 1

    def assignment_from(perm):
        out = np.empty(n, dtype=np.int64)
        start = 0
        for s, size in enumerate(sizes):
            out[perm[start:start + size]] = s
            start += size
        return out

    def complements_complete(assign):
        for s in range(n_folds):
            levels_out = np.unique(t[assign != s])
            if levels_out.size < k:
                return False
        return True

    for _ in range(max_retries):
        assign = assignment_from(rng.permutation(n))
        if complements_complete(assign):
            return assign
    # stratified fallback: deal each treatment group round-robin into folds
    assign = np.empty(n, dtype=np.int64)
    cursor = 0
    for level in range(k):
        idx = np.flatnonzero(t == level)
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            assign[i] = (cursor + j) % n_folds
        cursor += idx.size
    if not complements_complete(assign):
        raise DataError("a treatment level is too rare to cross-validate")
    return assign


def cv5(d: Dataset, grid: np.ndarray, fit, evaluate, seed) -> CVPath:
    """Generic 5-fold cross-validation over a descending penalty grid.

    ``fit(train_idx, penalty, warm, fold=s)`` returns a fitted model
    (``warm`` is the previous model along the path or None);
    ``evaluate(model, val_idx, fold=s)`` returns the validation loss,
    computed with the same loss used for fitting.  Deterministic for a
    fixed seed.
    """
    if d.n < 10:
        raise DataError("cross-validation requires n >= 10")
    grid = np.asarray(grid, dtype=float)
    assign = fold_partition(d.t, d.k, seed)
    fold_losses = np.empty((N_FOLDS, grid.size))
    for s in range(N_FOLDS):
        train_idx = np.flatnonzero(assign != s)
        val_idx = np.flatnonzero(assign == s)
        model = None
        for i, lam in enumerate(grid):
            model = fit(train_idx, float(lam), model, fold=s)
            fold_losses[s, i] = evaluate(model, val_idx, fold=s)
    cv_mean = fold_losses.mean(axis=0)
    with np.errstate(invalid="ignore", over="ignore"):
        cv_se = fold_losses.std(axis=0, ddof=1) / np.sqrt(N_FOLDS)
    index_min = int(np.argmin(cv_mean))
    threshold = cv_mean[index_min] + cv_se[index_min]
    index_1se = int(np.flatnonzero(cv_mean <= threshold)[0])
    return CVPath(
        grid=grid, fold_losses=fold_losses, cv_mean=cv_mean, cv_se=cv_se,
        lambda_min=float(grid[index_min]), lambda_1se=float(grid[index_1se]),
        index_min=index_min, index_1se=index_1se, fold_assignment=assign,
    )
