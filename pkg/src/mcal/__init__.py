"""mcal: calibrated estimation of treatment effects with multi-valued
treatments.

Fits group-Lasso penalized multi-class propensity-score and outcome-
regression models by calibrated or likelihood-based estimation, and turns
them into augmented IPW estimates of treatment means, ATEs and ATTs with
variance estimates, Wald intervals and covariate-balance diagnostics.
"""

from .data import Dataset, Standardization, load_csv, standardize, treatment_indicators
from .diagnostics import BalanceReport, mascd, rv, verify_fit
from .engine import (
    KKTReport,
    SolveConfig,
    SolveResult,
    block_update,
    check_kkt,
    penalized_objective,
    solve,
)
from .errors import DataError, McalError, NumericalError, SeparationError
from .estimate import (
    AteContrast,
    EstimateReport,
    aipw_mu,
    aipw_nu,
    ate_contrast,
    group_mean,
    wald_ci,
)
from .outcome import LINKS, ORModel, fit_rmlg, fit_rmls, fit_rwl
from .pipeline import PipelineResult, estimate_all, estimate_target, fit_or_cv, fit_ps_cv
from .propensity import PSModel, cal_loss, fit_rcal_ps, fit_rml_ps, ml_loss, predict_probs
from .simulation import (
    SimConfig,
    SimSummary,
    TruthRecord,
    gen_covariates,
    gen_data,
    run_monte_carlo,
    true_values,
)
from .tuning import CVPath, cv5, lambda_grid, lambda_star_or, lambda_star_ps

__version__ = "0.1.0"

__all__ = [
    "AteContrast", "BalanceReport", "CVPath", "DataError", "Dataset",
    "EstimateReport", "KKTReport", "LINKS", "McalError", "NumericalError",
    "ORModel", "PSModel", "PipelineResult", "SeparationError", "SimConfig",
    "SimSummary", "SolveConfig", "SolveResult", "Standardization",
    "TruthRecord", "aipw_mu", "aipw_nu", "ate_contrast", "block_update",
    "cal_loss", "check_kkt", "cv5", "estimate_all", "estimate_target",
    "fit_or_cv", "fit_ps_cv", "fit_rcal_ps", "fit_rml_ps", "fit_rmlg",
    "fit_rmls", "fit_rwl", "gen_covariates", "gen_data", "group_mean",
    "lambda_grid", "lambda_star_or", "lambda_star_ps", "load_csv", "mascd",
    "ml_loss", "penalized_objective", "predict_probs", "run_monte_carlo",
    "rv", "solve", "standardize", "treatment_indicators", "true_values",
    "verify_fit", "wald_ci",
]
