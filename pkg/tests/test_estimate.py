import numpy as np
import pytest
from scipy.special import ndtri

from mcal import (
    Dataset,
    NumericalError,
    aipw_mu,
    aipw_nu,
    ate_contrast,
    fit_rcal_ps,
    fit_rmls,
    fit_rwl,
    group_mean,
    predict_probs,
    wald_ci,
)
from mcal.data import treatment_indicators
from mcal.outcome import ORModel
from mcal.propensity import PSModel

from conftest import make_dataset


def fitted_pipeline(rng, n=150, p=3, k=3, t=1):
    d = make_dataset(rng, n=n, p=p, k=k)
    ps = fit_rcal_ps(d, t, 0.05)
    orm = fit_rwl(d, t, ps, 0.05)
    return d, ps, orm


class TestWaldCi:
    def test_standard_quantile(self):
        lo, hi = wald_ci(0.0, 1.0, 100, 0.95)
        z = ndtri(0.975)
        assert abs(z - 1.959964) < 1e-6
        assert abs(hi - z / 10.0) < 1e-9 and abs(lo + z / 10.0) < 1e-9
        assert abs(hi - 0.19600) < 5e-6

    def test_zero_variance_degenerate(self):
        lo, hi = wald_ci(1.5, 0.0, 50, 0.95)
        assert lo == hi == 1.5

    def test_nested_levels(self):
        lo90, hi90 = wald_ci(0.3, 2.0, 80, 0.90)
        lo95, hi95 = wald_ci(0.3, 2.0, 80, 0.95)
        assert lo95 < lo90 < hi90 < hi95

    def test_validation(self):
        with pytest.raises(ValueError):
            wald_ci(0.0, -1.0, 10, 0.95)
        with pytest.raises(ValueError):
            wald_ci(0.0, 1.0, 10, 1.5)


class TestAipwMu:
    def test_influence_consistency(self, rng):
        d, ps, orm = fitted_pipeline(rng)
        rep = aipw_mu(d, orm, ps, 1)
        assert abs(rep.mu_hat - rep.influence.mean()) < 1e-14
        assert abs(rep.v_hat - np.mean((rep.influence - rep.mu_hat) ** 2)) < 1e-14

    def test_decomposition_identity(self, rng):
        d, ps, orm = fitted_pipeline(rng)
        rep = aipw_mu(d, orm, ps, 1)
        shares = treatment_indicators(d).mean(axis=0)
        recomposed = np.mean((d.t == 1) * d.y) + sum(
            rep.nu_hat[k] * shares[k] for k in rep.nu_hat
        )
        assert abs(rep.mu_hat - recomposed) < 1e-10

    def test_tied_copies_reduce_to_classical_form(self, rng):
        # same coefficient vector in every copy: the generalized estimator
        # must equal the single-prediction augmented IPW value
        d = make_dataset(rng, n=120, p=3, k=3)
        t = 2
        ps = fit_rcal_ps(d, t, 0.08)
        coef = rng.standard_normal(d.p + 1) * 0.3
        tied = ORModel(coef=np.tile(coef[:, None], (1, d.k - 1)), method="rwl",
                       link="identity", penalty=0.0, target=t,
                       copies=tuple(k for k in range(d.k) if k != t))
        single = ORModel(coef=np.tile(coef[:, None], (1, d.k)), method="rmlg",
                         link="identity", penalty=0.0)
        rep_gen = aipw_mu(d, tied, ps, t)
        rep_cls = aipw_mu(d, single, ps, t)
        probs = predict_probs(ps, d)
        rt = (d.t == t).astype(float)
        w = rt / probs[:, t]
        mhat = d.f @ coef
        phi_classical = w * d.y - (w - 1.0) * mhat
        assert abs(rep_gen.mu_hat - phi_classical.mean()) < 1e-12
        assert abs(rep_gen.mu_hat - rep_cls.mu_hat) < 1e-12

    def test_boundedness_of_calibrated_estimate(self, rng):
        for seed in range(3):
            local = np.random.default_rng(seed)
            d = make_dataset(local, n=150, p=4, k=3)
            t = 1
            ps = fit_rcal_ps(d, t, 0.06)
            orm = fit_rwl(d, t, ps, 0.05)
            assert orm.results[0].converged
            rep = aipw_mu(d, orm, ps, t)
            mhat = orm.copy_means(d)
            pool = [d.y[d.t == t]]
            for c, k in enumerate(orm.copies):
                pool.append(mhat[d.t == k, c])
            pool = np.concatenate(pool)
            assert pool.min() - 1e-9 <= rep.mu_hat <= pool.max() + 1e-9

    def test_constant_outcome_and_prediction(self, rng):
        d = make_dataset(rng, n=90, p=2, k=3)
        c = 2.5
        d = Dataset(y=np.full(d.n, c), t=d.t, f=d.f, k=d.k, p=d.p)
        t = 0
        ps = fit_rcal_ps(d, t, 0.1)
        coef = np.zeros((d.p + 1, d.k - 1))
        coef[0] = c
        orm = ORModel(coef=coef, method="rwl", link="identity", penalty=0.0,
                      target=t, copies=tuple(k for k in range(d.k) if k != t))
        rep = aipw_mu(d, orm, ps, t)
        assert abs(rep.mu_hat - c) < 1e-12
        assert rep.v_hat < 1e-24

    def test_extreme_weight_error_names_row(self, rng):
        d = make_dataset(rng, n=60, p=2, k=3)
        coef = np.zeros((d.p + 1, d.k))
        coef[0, 0] = 690.0  # probability of other treatments ~ exp(-690)
        ps = PSModel(coef=coef, constraint="one_to_zero", reference=1,
                     method="rcal", target=1, penalty=0.0, result=None)
        orm = fit_rmls(d, 0.0)
        with pytest.raises(NumericalError, match="row"):
            aipw_mu(d, orm, ps, 1)


class TestAipwNu:
    def test_same_treatment_rejected(self, rng):
        d, ps, orm = fitted_pipeline(rng)
        with pytest.raises(ValueError, match="group_mean"):
            aipw_nu(d, orm, ps, 1, 1)
        assert abs(group_mean(d, 1) - d.y[d.t == 1].mean()) < 1e-14

    def test_matches_direct_summation(self, rng):
        d = make_dataset(rng, n=30, p=2, k=3)
        t, k = 0, 2
        ps = fit_rcal_ps(d, t, 0.1)
        orm = fit_rwl(d, t, ps, 0.1)
        nu, u = aipw_nu(d, orm, ps, t, k)
        probs = predict_probs(ps, d)
        mhat = orm.copy_means(d)
        c = list(orm.copies).index(k)
        total = 0.0
        for i in range(d.n):
            rt = 1.0 if d.t[i] == t else 0.0
            rk = 1.0 if d.t[i] == k else 0.0
            w = probs[i, k] / probs[i, t]
            total += rt * d.y[i] * w - (rt * w - rk) * mhat[i, c]
        share = np.mean(d.t == k)
        assert abs(nu - total / d.n / share) < 1e-12
        # variance formula by direct summation
        tot2 = 0.0
        for i in range(d.n):
            rt = 1.0 if d.t[i] == t else 0.0
            rk = 1.0 if d.t[i] == k else 0.0
            w = probs[i, k] / probs[i, t]
            phik = rt * d.y[i] * w - (rt * w - rk) * mhat[i, c]
            tot2 += (phik - rk * nu) ** 2
        assert abs(u - tot2 / d.n / share**2) < 1e-10

    def test_decomposition_reproduces_mu(self, rng):
        d, ps, orm = fitted_pipeline(rng, t=1)
        rep = aipw_mu(d, orm, ps, 1)
        total = np.mean((d.t == 1) * d.y)
        for k in rep.nu_hat:
            nu, _ = aipw_nu(d, orm, ps, 1, k)
            assert abs(nu - rep.nu_hat[k]) < 1e-14
            total += nu * np.mean(d.t == k)
        assert abs(total - rep.mu_hat) < 1e-10


class TestAteContrast:
    def test_self_contrast_degenerate(self, rng):
        d, ps, orm = fitted_pipeline(rng)
        rep = aipw_mu(d, orm, ps, 1)
        c = ate_contrast(rep, rep)
        assert c.diff == 0.0 and c.variance == 0.0

    def test_variance_identity(self, rng):
        d = make_dataset(rng, n=130, p=3, k=3)
        reports = []
        for t in (0, 1):
            ps = fit_rcal_ps(d, t, 0.07)
            orm = fit_rwl(d, t, ps, 0.07)
            reports.append(aipw_mu(d, orm, ps, t))
        c = ate_contrast(reports[0], reports[1])
        a = reports[0].influence - reports[0].mu_hat
        b = reports[1].influence - reports[1].mu_hat
        var_t = np.mean(a * a)
        var_k = np.mean(b * b)
        cov = np.mean(a * b)
        assert abs(c.variance - (var_t + var_k - 2 * cov)) < 1e-12
        assert abs(c.diff - (reports[0].mu_hat - reports[1].mu_hat)) < 1e-14
        lo, hi = c.ci(0.95)
        assert lo < c.diff < hi

    def test_mismatched_lengths_rejected(self, rng):
        d, ps, orm = fitted_pipeline(rng, n=150)
        rep = aipw_mu(d, orm, ps, 1)
        d2, ps2, orm2 = fitted_pipeline(np.random.default_rng(5), n=100)
        rep2 = aipw_mu(d2, orm2, ps2, 1)
        with pytest.raises(ValueError, match="different"):
            ate_contrast(rep, rep2)
