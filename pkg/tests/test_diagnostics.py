import numpy as np
import pytest

from mcal import (
    SolveConfig,
    aipw_mu,
    fit_rcal_ps,
    fit_rml_ps,
    fit_rmls,
    fit_rwl,
    mascd,
    predict_probs,
    rv,
    verify_fit,
)
from mcal.data import Dataset, treatment_indicators

from conftest import make_dataset


def uniform_probs(d):
    freqs = d.group_counts() / d.n
    return np.tile(freqs, (d.n, 1))


class TestMascd:
    def test_constant_probabilities_reduce_to_group_gap(self, rng):
        d = make_dataset(rng, n=80, p=3, k=3)
        t = 1
        probs = uniform_probs(d)
        got = mascd(d, probs, t)
        fj = d.f[:, 1:]
        grp = fj[d.t == t].mean(axis=0)
        expected = np.abs((grp - fj.mean(axis=0)) / fj.std(axis=0)).max()
        assert abs(got - expected) < 1e-12

    def test_balanced_covariates_give_zero(self):
        base = np.array([[1.0, 0.5], [1.0, -0.5]])
        f = np.vstack([base, base])
        d = Dataset(y=np.zeros(4), t=np.array([0, 0, 1, 1]), f=f, k=2, p=1)
        assert mascd(d, uniform_probs(d), 0) < 1e-14

    def test_matches_hand_summation(self, rng):
        d = make_dataset(rng, n=20, p=2, k=3)
        t = 0
        ps = fit_rcal_ps(d, t, 0.1)
        probs = predict_probs(ps, d)
        best = 0.0
        for j in range(1, d.p + 1):
            num = den = 0.0
            for i in range(d.n):
                if d.t[i] == t:
                    num += d.f[i, j] / probs[i, t]
                    den += 1.0 / probs[i, t]
            gap = num / den - d.f[:, j].mean()
            best = max(best, abs(gap) / d.f[:, j].std())
        assert abs(mascd(d, probs, t) - best) < 1e-12


class TestRv:
    def test_constant_weights_zero(self, rng):
        d = make_dataset(rng, n=60, p=2, k=3)
        assert rv(d, uniform_probs(d), 1) < 1e-30  # exact up to roundoff

    def test_two_point_weights(self):
        # inverse weights {1, 3} equally: variance 1 over squared mean 4
        f = np.ones((4, 1))
        d = Dataset(y=np.zeros(4), t=np.array([0, 0, 1, 1]), f=f, k=2, p=0)
        probs = np.array([[1.0, 0.5], [1.0 / 3.0, 0.5], [0.5, 0.5], [0.5, 0.5]])
        assert abs(rv(d, probs, 0) - 0.25) < 1e-14

    def test_matches_direct_summation(self, rng):
        d = make_dataset(rng, n=40, p=2, k=3)
        t = 2
        ps = fit_rcal_ps(d, t, 0.08)
        probs = predict_probs(ps, d)
        w = np.array([1.0 / probs[i, t] for i in range(d.n) if d.t[i] == t])
        expected = w.var() / w.mean() ** 2
        assert abs(rv(d, probs, t) - expected) < 1e-12


class TestVerifyFit:
    def test_converged_pipeline_passes_all_checks(self, rng):
        d = make_dataset(rng, n=150, p=3, k=3)
        t = 1
        ps = fit_rcal_ps(d, t, 0.05)
        orm = fit_rwl(d, t, ps, 0.05)
        rep = aipw_mu(d, orm, ps, t)
        diag = verify_fit(d, ps, orm, rep)
        assert diag.all_passed
        names = {c.name for c in diag.checks}
        assert names == {"weight_sum", "covariate_balance",
                         "weighted_orthogonality", "decomposition", "boundedness"}
        assert diag.balance_bound == pytest.approx(np.sqrt(d.k - 1) * 0.05)

    def test_loose_solver_flagged(self, rng):
        d = make_dataset(rng, n=150, p=3, k=3)
        t = 0
        crude = SolveConfig(max_outer=1, tol_obj=1.0, tol_coef=1.0, tol_inner=1e-2)
        ps = fit_rcal_ps(d, t, 0.05, cfg=crude)
        orm = fit_rwl(d, t, ps, 0.05)
        rep = aipw_mu(d, orm, ps, t)
        diag = verify_fit(d, ps, orm, rep)
        weight_check = next(c for c in diag.checks if c.name == "weight_sum")
        assert weight_check.passed is False
        assert weight_check.value > weight_check.bound

    def test_rml_pipeline_reports_informationally(self, rng):
        d = make_dataset(rng, n=150, p=3, k=3)
        ps = fit_rml_ps(d, 0.05)
        orm = fit_rmls(d, 0.05)
        rep = aipw_mu(d, orm, ps, 1)
        diag = verify_fit(d, ps, orm, rep)
        for c in diag.checks:
            if c.name in ("weight_sum", "covariate_balance"):
                assert c.passed is None
        assert isinstance(diag.mascd, float) and isinstance(diag.rv, float)

    def test_rerun_is_bit_identical(self, rng):
        d = make_dataset(rng, n=120, p=3, k=3)
        t = 2
        ps = fit_rcal_ps(d, t, 0.06)
        orm = fit_rwl(d, t, ps, 0.05)
        rep = aipw_mu(d, orm, ps, t)
        d1 = verify_fit(d, ps, orm, rep)
        d2 = verify_fit(d, ps, orm, rep)
        assert d1.mascd == d2.mascd and d1.rv == d2.rv
        assert np.array_equal(d1.balance_residuals, d2.balance_residuals)
        assert d1.weight_sum_residual == d2.weight_sum_residual

    def test_residual_summation_identity(self, rng):
        # summing the per-treatment calibration residuals over k != t gives
        # the inverse-probability residual, observation by observation
        d = make_dataset(rng, n=50, p=3, k=4)
        t = 1
        ps = fit_rcal_ps(d, t, 0.2)
        probs = predict_probs(ps, d)
        r = treatment_indicators(d)
        rt = r[:, t]
        cols = [k for k in range(d.k) if k != t]
        summed = (rt[:, None] * probs[:, cols] / probs[:, [t]] - r[:, cols]).sum(axis=1)
        direct = rt / probs[:, t] - 1.0
        assert np.abs(summed - direct).max() < 1e-12
