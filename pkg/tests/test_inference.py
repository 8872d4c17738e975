"""Score, empirical information, and Wald test checks."""

import numpy as np
import pytest

from censgmr.data import dataset_from_latent
from censgmr.inference import (
    ParamIndex,
    complete_score,
    empirical_information,
    score_matrix,
    stationarity_gap,
    wald_tests,
)
from censgmr.mixture import FitConfig, MixtureParams, e_step, fit_mixture
from censgmr.simulation import generate, scenario_mild
from censgmr.tobit import RegressionParams

from oracles import phi_erf_series


def uncensored_dataset(n=200, p=2, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
    beta = rng.normal(size=(d, p))
    sigma = np.array([[1.0, 0.3], [0.3, 0.8]])
    Y = X @ beta + rng.multivariate_normal(np.zeros(p), sigma, n)
    return dataset_from_latent(Y, X, np.full(p, -np.inf), np.full(p, np.inf))


def fit_g1(ds):
    return fit_mixture(ds, FitConfig(n_components=1, n_restarts=1, seed=0, tol=1e-12))


def q_per_row(index, cache, dataset, i):
    """Independent per-observation Q_c with expectations frozen at the fit."""

    def q(v):
        params = index.unpack(v)
        total = 0.0
        for g in range(index.G):
            z = cache.Z[i, g]
            sigma = params.components[g].sigma
            prec = np.linalg.inv(sigma)
            m = dataset.X[i] @ params.components[g].beta
            a = (
                cache.y2[g][i]
                - np.outer(m, cache.y1[g][i])
                - np.outer(cache.y1[g][i], m)
                + np.outer(m, m)
            )
            total += z * (
                np.log(params.omega[g])
                - 0.5 * np.linalg.slogdet(sigma)[1]
                - 0.5 * np.trace(prec @ a)
            )
        return total

    return q


class TestParamIndex:
    def test_layout_bijective(self):
        index = ParamIndex(G=3, d=4, p=2)
        assert index.nu == 2 + 3 * (8 + 3)
        rng = np.random.default_rng(0)
        comps = []
        for _ in range(3):
            a = rng.normal(size=(2, 2))
            comps.append(RegressionParams(rng.normal(size=(4, 2)), a @ a.T + np.eye(2)))
        params = MixtureParams(np.array([0.2, 0.5, 0.3]), tuple(comps))
        v = index.pack(params)
        back = index.unpack(v)
        np.testing.assert_allclose(back.omega, params.omega, atol=1e-15)
        for c1, c2 in zip(back.components, params.components):
            np.testing.assert_array_equal(c1.beta, c2.beta)
            np.testing.assert_array_equal(c1.sigma, c2.sigma)

    def test_beta_flat_column_major(self):
        index = ParamIndex(G=1, d=3, p=2)
        # column-major by response: (row, col) -> col*d + row
        assert index.beta_flat(0, 2, 0) == index.beta_slice(0).start + 2
        assert index.beta_flat(0, 0, 1) == index.beta_slice(0).start + 3


class TestCompleteScore:
    def test_g1_uncensored_classical_score(self):
        ds = uncensored_dataset()
        fit = fit_g1(ds)
        comp = fit.params.components[0]
        prec = np.linalg.inv(comp.sigma)
        S = score_matrix(fit.params, ds, fit.cache)
        index = ParamIndex(1, ds.d, ds.p)
        for i in [0, 17, 101]:
            resid = ds.Y[i] - ds.X[i] @ comp.beta
            expected = np.outer(ds.X[i], resid @ prec)
            got = S[i, index.beta_slice(0)].reshape((ds.d, ds.p), order="F")
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_total_score_vanishes_at_mle(self):
        ds = uncensored_dataset(seed=3)
        fit = fit_g1(ds)
        norm, threshold = stationarity_gap(fit.params, ds, fit.cache)
        assert norm < threshold

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(4):
            ds, _ = generate(scenario_mild(n=20, seed=trial))
            # shrink to d=2 to keep the instance small
            ds = dataset_from_latent(
                ds.Y + 0.0, ds.X[:, :2], ds.lower_limits, ds.upper_limits
            )
            fit = fit_mixture(ds, FitConfig(n_components=2, n_restarts=2, seed=trial, max_iter=40))
            index = ParamIndex(2, 2, 2)
            _, cache = e_step(fit.params, ds)
            S = score_matrix(fit.params, ds, cache)
            v0 = index.pack(fit.params)
            for i in (0, 7, 13):
                q = q_per_row(index, cache, ds, i)
                fd = np.empty(index.nu)
                for k in range(index.nu):
                    h = 1e-5 * max(abs(v0[k]), 1.0)
                    vp = v0.copy()
                    vp[k] += h
                    vm = v0.copy()
                    vm[k] -= h
                    fd[k] = (q(vp) - q(vm)) / (2 * h)
                scale = np.abs(fd).max()
                np.testing.assert_allclose(S[i], fd, rtol=1e-4, atol=1e-7 * max(scale, 1.0))

    def test_row_api_matches_matrix(self):
        ds, _ = generate(scenario_mild(n=30, seed=9))
        fit = fit_mixture(ds, FitConfig(n_components=2, n_restarts=2, seed=2, max_iter=30))
        S = score_matrix(fit.params, ds, fit.cache)
        row = complete_score(fit.params, ds, 11, fit.cache.Z[11], fit.cache)
        np.testing.assert_allclose(row, S[11], atol=1e-12)


class TestEmpiricalInformation:
    def test_symmetric_psd(self):
        ds, _ = generate(scenario_mild(n=150, seed=2))
        fit = fit_mixture(ds, FitConfig(n_components=2, n_restarts=2, seed=4))
        info = empirical_information(fit.params, ds, fit.cache)
        np.testing.assert_allclose(info, info.T, atol=1e-12)
        ev = np.linalg.eigvalsh(info)
        assert ev.min() >= -1e-8 * np.abs(info).max()

    def test_doubling_dataset_doubles_information(self):
        ds, _ = generate(scenario_mild(n=80, seed=5))
        fit = fit_mixture(ds, FitConfig(n_components=2, n_restarts=2, seed=6))
        info1 = empirical_information(fit.params, ds, fit.cache)
        doubled = ds.row_subset(np.concatenate([np.arange(ds.n), np.arange(ds.n)]))
        info2 = empirical_information(fit.params, doubled)
        np.testing.assert_allclose(info2, 2.0 * info1, rtol=1e-10)

    def test_g1_uncensored_matches_classical_covariance(self):
        ds = uncensored_dataset(n=1000, seed=8)
        fit = fit_g1(ds)
        comp = fit.params.components[0]
        info = empirical_information(fit.params, ds, fit.cache)
        cov = np.linalg.inv(info)
        index = ParamIndex(1, ds.d, ds.p)
        sl = index.beta_slice(0)
        classical = np.kron(comp.sigma, np.linalg.inv(ds.X.T @ ds.X))
        got = cov[sl, sl]
        np.testing.assert_allclose(np.diag(got), np.diag(classical), rtol=0.10)


class TestWald:
    def test_zero_estimate_gives_p_one(self):
        ds = uncensored_dataset(seed=11)
        fit = fit_g1(ds)
        # force a zero coefficient
        comp = fit.params.components[0]
        beta = comp.beta.copy()
        beta[1, 0] = 0.0
        params = MixtureParams(np.array([1.0]), (RegressionParams(beta, comp.sigma),))
        info = empirical_information(params, ds)
        report = wald_tests(params, info)
        entry = report.entry(0, 1, 0)
        assert entry.z == 0.0
        assert entry.p == 1.0

    def test_critical_z_value(self):
        # |z| = 1.959964 -> p = 0.05 (erf-series cross-check)
        z = 1.959964
        p = 2 * (1 - phi_erf_series(z))
        assert p == pytest.approx(0.05, abs=1e-6)
        ds = uncensored_dataset(seed=13)
        fit = fit_g1(ds)
        info = empirical_information(fit.params, ds, fit.cache)
        report = wald_tests(fit.params, info)
        for e in report.entries:
            assert 0.0 < e.p <= 1.0
            assert e.se > 0
            assert e.z == pytest.approx(e.estimate / e.se, rel=1e-12)

    def test_bonferroni_threshold(self):
        ds, _ = generate(scenario_mild(n=250, seed=3))
        fit = fit_mixture(ds, FitConfig(n_components=2, n_restarts=2, seed=5))
        info = empirical_information(fit.params, ds, fit.cache)
        report = wald_tests(fit.params, info)
        assert report.n_tests == 2 * 4 * 2
        assert report.bonferroni_alpha == pytest.approx(0.05 / 16)
        for e in report.entries:
            assert report.sig_bonferroni(e) == (e.p < 0.05 / 16)

    def test_singular_information_flagged(self):
        ds = uncensored_dataset(n=120, seed=17)
        fit = fit_g1(ds)
        info = empirical_information(fit.params, ds, fit.cache)
        info[0, :] = 0.0
        info[:, 0] = 0.0
        report = wald_tests(fit.params, info)
        assert report.pseudo_inverse
