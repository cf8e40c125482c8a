"""Datasets, design matrices, standardization and treatment encoding.

A :class:`Dataset` bundles the outcome vector, integer treatment codes in
``0..K-1`` and the regressor matrix ``f`` whose column 0 is identically 1
(the intercept).  Datasets are immutable after construction and safe to
share across concurrent fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DataError


@dataclass(frozen=True)
class Dataset:
    """Immutable observational sample ``(y, t, f)`` with intercept column.

    Attributes
    ----------
    y : outcome vector, length n.
    t : treatment codes in ``0..k-1``, length n, every level present.
    f : regressor matrix, shape ``(n, p + 1)``, column 0 identically 1.
    k : number of treatment levels (>= 2).
    p : number of non-intercept regressors.
    treatment_labels : original treatment labels indexed by code.
    column_names : names of the regressor columns (incl. the intercept).
    """

    y: np.ndarray
    t: np.ndarray
    f: np.ndarray
    k: int
    p: int
    treatment_labels: tuple = ()
    column_names: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=np.int64)
        f = np.asarray(self.f, dtype=float)
        if y.ndim != 1 or t.ndim != 1 or f.ndim != 2:
            raise DataError("y and t must be vectors, f a matrix")
        n = y.shape[0]
        if t.shape[0] != n or f.shape[0] != n:
            raise DataError("y, t, f must have the same number of rows")
        if not (np.isfinite(y).all() and np.isfinite(f).all()):
            raise DataError("non-finite value in outcome or regressors")
        if self.k < 2:
            raise DataError("at least 2 treatment levels required")
        if n < self.k:
            raise DataError(f"n = {n} smaller than number of treatments {self.k}")
        counts = np.bincount(t, minlength=self.k)
        if t.min() < 0 or t.max() >= self.k or (counts == 0).any():
            missing = np.flatnonzero(counts == 0).tolist()
            raise DataError(f"treatment levels with zero rows: {missing}")
        if f.shape[1] != self.p + 1:
            raise DataError("f must have p + 1 columns")
        if not np.all(f[:, 0] == 1.0):
            raise DataError("column 0 of f must be identically 1")
        for arr in (y, t, f):
            arr.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)
        if not self.treatment_labels:
            object.__setattr__(self, "treatment_labels", tuple(range(self.k)))
        if not self.column_names:
            names = ("(intercept)",) + tuple(f"f{j}" for j in range(1, self.p + 1))
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def group_counts(self) -> np.ndarray:
        return np.bincount(self.t, minlength=self.k)

    def gram(self) -> np.ndarray:
        """Cached second-moment matrix of the regressors, ``f' f / n``."""
        g = self._cache.get("gram")
        if g is None:
            g = self.f.T @ self.f / self.n
            self._cache["gram"] = g
        return g

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row subset; the subset must still contain every treatment level."""
        return Dataset(
            self.y[idx], self.t[idx], self.f[idx], self.k, self.p,
            self.treatment_labels, self.column_names,
        )

    def view(self, idx: np.ndarray) -> "RowView":
        """Unchecked row view for loss evaluation on held-out folds, which
        need not contain every treatment level."""
        return RowView(self.y[idx], self.t[idx], self.f[idx], self.k, self.p)


@dataclass(frozen=True)
class RowView:
    """Minimal duck-type of :class:`Dataset` used to evaluate losses on row
    subsets without re-validating dataset invariants."""

    y: np.ndarray
    t: np.ndarray
    f: np.ndarray
    k: int
    p: int

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class Standardization:
    """Per-column location/scale transform of the non-intercept regressors.

    ``scales`` are sample standard deviations with divisor n, so that the
    transformed columns have sample mean 0 and sample variance 1.
    """

    means: np.ndarray
    scales: np.ndarray
    applied: bool = True

    def transform(self, f: np.ndarray) -> np.ndarray:
        out = f.copy()
        out[:, 1:] = (f[:, 1:] - self.means) / self.scales
        return out

    def destandardize_coef(self, coef: np.ndarray) -> np.ndarray:
        """Map coefficients fitted on the standardized scale back to the
        original scale, leaving fitted linear predictors unchanged."""
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        out = coef.copy()
        out[1:] = coef[1:] / self.scales[:, None]
        out[0] = coef[0] - (self.means / self.scales) @ coef[1:]
        return out

    def standardize_coef(self, coef: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`destandardize_coef`."""
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        out = coef.copy()
        out[1:] = coef[1:] * self.scales[:, None]
        out[0] = coef[0] + self.means @ coef[1:]
        return out


def standardize(d: Dataset) -> tuple[Dataset, Standardization]:
    """Rescale every non-intercept column to sample mean 0, variance 1.

    Raises
    ------
    DataError
        If a column has zero sample variance (names the column).
    """
    means = d.f[:, 1:].mean(axis=0)
    variances = d.f[:, 1:].var(axis=0)  # divisor n
    zero = np.flatnonzero(variances <= 0.0)
    if zero.size:
        names = [d.column_names[j + 1] for j in zero]
        raise DataError(f"zero-variance column(s): {names}")
    std = Standardization(means=means, scales=np.sqrt(variances))
    f_std = std.transform(d.f)
    return replace(d, f=f_std), std


def treatment_indicators(d) -> np.ndarray:
    """Binary n x K matrix with entry (i, k) equal to 1{t_i = k}.

    Accepts a :class:`Dataset` or :class:`RowView`.
    """
    ind = np.zeros((d.n, d.k))
    ind[np.arange(d.n), d.t] = 1.0
    return ind


def load_csv(path, schema: dict) -> Dataset:
    """Load a dataset from an RFC-4180 CSV file with a header row.

    Parameters
    ----------
    path : CSV file path.
    schema : column-role map with keys ``outcome`` (column name),
        ``treatment`` (column name) and optionally ``covariates``
        (list of column names; default: all remaining numeric columns).

    The treatment column is relabeled to contiguous codes ``0..K-1`` in
    order of first appearance; the original labels are recorded in
    ``Dataset.treatment_labels``.  Rows with any missing value are
    rejected, not imputed.
    """
    frame = pd.read_csv(path)
    outcome = schema["outcome"]
    treatment = schema["treatment"]
    for col in (outcome, treatment):
        if col not in frame.columns:
            raise DataError(f"missing column: {col!r}")
    covariates = schema.get("covariates")
    if covariates is None:
        covariates = [c for c in frame.columns if c not in (outcome, treatment)]
    missing = [c for c in covariates if c not in frame.columns]
    if missing:
        raise DataError(f"missing column(s): {missing}")

    y = pd.to_numeric(frame[outcome], errors="coerce").to_numpy(dtype=float)
    x = np.column_stack(
        [pd.to_numeric(frame[c], errors="coerce").to_numpy(dtype=float)
         for c in covariates]
    ) if covariates else np.empty((len(frame), 0))
    if not np.isfinite(y).all():
        raise DataError(f"non-finite value in outcome column {outcome!r}")
    if x.size and not np.isfinite(x).all():
        bad = [covariates[j] for j in np.flatnonzero(~np.isfinite(x).all(axis=0))]
        raise DataError(f"non-finite value in covariate column(s) {bad}")

    t_raw = frame[treatment].to_numpy()
    if pd.isna(t_raw).any():
        raise DataError(f"non-finite value in treatment column {treatment!r}")
    labels, codes = [], np.empty(len(t_raw), dtype=np.int64)
    seen: dict = {}
    for i, lab in enumerate(t_raw):
        try:
            flab = float(lab)
        except (TypeError, ValueError):
            raise DataError(f"treatment label {lab!r} is not integer-codable")
        if not flab.is_integer():
            raise DataError(f"treatment label {lab!r} is not integer-codable")
        key = int(flab)
        if key not in seen:
            seen[key] = len(labels)
            labels.append(key)
        codes[i] = seen[key]
    if len(labels) < 2:
        raise DataError("fewer than 2 treatment levels")

    f = np.column_stack([np.ones(len(frame))] + ([x] if x.size else []))
    return Dataset(
        y=y, t=codes, f=f, k=len(labels), p=f.shape[1] - 1,
        treatment_labels=tuple(labels),
        column_names=("(intercept)",) + tuple(covariates),
    )
