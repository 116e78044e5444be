"""Closed forms, quadrature oracles and posterior summaries."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rsrlab.analytics import (beta_marginal_density, closed_form_ns, conditional_sigma_mean,
                              ns_posterior_sigma_mean, quadrature_moments, summarize)
from rsrlab.bases import DesignMatrix, complement_basis
from rsrlab.errors import InvalidParameter, MomentUndefined
from rsrlab.model import PriorConfig, make_custom, make_model
from rsrlab.samplers import ChainConfig, ChainOutput, batch_means, gibbs_gaussian
from rsrlab.theorems import random_instance

from conftest import path_graph

PR = PriorConfig()


def _chain(B):
    B = np.asarray(B, dtype=float)
    return ChainOutput(B.reshape(len(B), -1), None, None, 0, 0)


class TestSummaries:
    def test_midpoint_quantiles(self):
        s = summarize(_chain(np.arange(1, 1001) * 0.5))
        assert s.lower[0] == pytest.approx(25.5 * 0.5)
        assert s.upper[0] == pytest.approx(975.5 * 0.5)

    def test_symmetric_mean_median(self):
        x = np.random.default_rng(0).standard_normal(20_000)
        s = summarize(_chain(x))
        assert abs(s.mean[0] - s.median[0]) < 3 * s.mcse[0]

    def test_rejects_bad_alpha(self):
        with pytest.raises(InvalidParameter):
            summarize(_chain(np.zeros(200)), alpha=1.0)

    def test_rows_order(self):
        s = summarize(_chain(np.arange(200.0)), names=["b"])
        name, mean, var, lo, hi, mcse = next(s.rows())
        assert name == "b" and lo < mean < hi


class TestSigmaMeans:
    def test_worked_value(self):
        # n = 10, p = 1, residual sum of squares 9: (0.01 + 4.5) / (-0.99 + 4.5)
        X = np.ones((10, 1))
        Y = np.zeros(10)
        Y[:2] = [3 / np.sqrt(2), -3 / np.sqrt(2)]
        assert ns_posterior_sigma_mean(X, Y, PR) == pytest.approx(4.51 / 3.51, rel=1e-12)

    def test_response_in_column_space(self):
        X = np.column_stack([np.ones(7), np.arange(7.0)])
        Y = X @ [2.0, -1.0]
        want = (1 / PR.b_eps) / ((PR.a_eps - 1) + 0.5 * 5)
        assert ns_posterior_sigma_mean(X, Y, PR) == pytest.approx(want, rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_residual_term_quadratic(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(12), rng.standard_normal(12)])
        Y = rng.standard_normal(12)
        den = (PR.a_eps - 1) + 0.5 * 10
        r1 = ns_posterior_sigma_mean(X, Y, PR) * den - 1 / PR.b_eps
        r2 = ns_posterior_sigma_mean(X, 2 * Y, PR) * den - 1 / PR.b_eps
        assert r2 == pytest.approx(4 * r1, rel=1e-9)

    def test_undefined_when_too_few_rows(self):
        with pytest.raises(MomentUndefined):
            ns_posterior_sigma_mean(np.ones((2, 1)), np.array([1.0, 2.0]), PR)

    def _rhz(self, n=6, seed=0):
        rng = np.random.default_rng(seed)
        d = DesignMatrix.with_ones(rng.standard_normal(n))
        return make_model("RHZ", path_graph(n), d), rng.standard_normal(n)

    def test_small_ratio_limit(self):
        spec, Y = self._rhz()
        floor = 1 / (PR.b_eps * (PR.a_eps + 0.5 * (spec.n - spec.p) - 1))
        assert conditional_sigma_mean(spec, Y, 1e-12) == pytest.approx(floor, rel=1e-8)

    def test_large_ratio_limit(self):
        spec, Y = self._rhz()
        assert conditional_sigma_mean(spec, Y, 1e12) == pytest.approx(ns_posterior_sigma_mean(spec.X, Y, PR), rel=1e-8)

    def test_unit_ratio_direct(self):
        spec, Y = self._rhz()
        X, W, F = spec.X, spec.W, spec.F
        P_perp = np.eye(6) - X @ np.linalg.inv(X.T @ X) @ X.T
        Sig = P_perp - W @ np.linalg.inv(W.T @ W + F) @ W.T
        want = (1 / PR.b_eps + 0.5 * Y @ Sig @ Y) / (PR.a_eps + 0.5 * (6 - 2) - 1)
        assert conditional_sigma_mean(spec, Y, 1.0) == pytest.approx(want, rel=1e-10)

    def test_negative_ratio(self):
        spec, Y = self._rhz()
        with pytest.raises(InvalidParameter):
            conditional_sigma_mean(spec, Y, -1.0)


class TestClosedFormNS:
    def setup_method(self):
        rng = np.random.default_rng(40)
        self.x = rng.uniform(0.5, 2.0, 25)
        self.Y = 0.8 * self.x + rng.standard_normal(25)
        self.cf = closed_form_ns(self.x[:, None], self.Y, PR)

    def test_normalized(self):
        tot, _ = integrate.quad(self.cf.pdf, -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=200)
        assert abs(tot - 1) < 1e-6

    def test_mode_at_ols(self):
        ols = (self.x @ self.Y) / (self.x @ self.x)
        grid = ols + np.linspace(-1e-3, 1e-3, 2001)
        assert grid[np.argmax(self.cf.pdf(grid))] == pytest.approx(ols, abs=1e-6)

    def test_matches_student_t(self):
        grid = self.cf.b + np.linspace(-1, 1, 9)
        np.testing.assert_allclose(self.cf.pdf(grid), self.cf.dist.pdf(grid), rtol=1e-9)
        np.testing.assert_allclose(self.cf.cdf(grid), self.cf.dist.cdf(grid), atol=1e-10)

    def test_gibbs_ks_and_quantiles(self):
        spec = make_model("NS", None, DesignMatrix(self.x[:, None]))
        out = gibbs_gaussian(spec, self.Y, ChainConfig(110_000, burn_in=10_000, seed=3))
        b = out.beta_samples[:, 0]
        assert stats.kstest(b, self.cf.dist.cdf).statistic < 0.02
        s = summarize(out)
        for p, got in ((0.025, s.lower[0]), (0.975, s.upper[0])):
            q = self.cf.dist.ppf(p)
            # delta method: MCSE of the indicator over the density at the quantile
            mcse_p, _ = batch_means((b <= q).astype(float))
            assert abs(got - q) < 3 * mcse_p / self.cf.pdf(q)

    def test_multiple_columns_rejected(self):
        with pytest.raises(InvalidParameter):
            closed_form_ns(np.ones((5, 2)), np.ones(5), PR)


class TestQuadrature:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_mean_is_least_squares(self, seed):
        inst = random_instance(np.random.default_rng(seed), n_max=16)
        qm = quadrature_moments(inst.spec, inst.Y)
        X = inst.design.X
        np.testing.assert_allclose(qm.mean, np.linalg.solve(X.T @ X, X.T @ inst.Y), atol=1e-8)

    def test_empty_basis_matches_ns(self):
        rng = np.random.default_rng(3)
        d = DesignMatrix.with_ones(rng.standard_normal(15))
        Y = rng.standard_normal(15)
        qm = quadrature_moments(make_model("HH", path_graph(15), d, q=0), Y)
        s = ns_posterior_sigma_mean(d.X, Y, PR)
        np.testing.assert_allclose(qm.variance, np.diag(np.linalg.inv(d.X.T @ d.X)) * s, rtol=1e-12)
        assert qm.sigma_mean == pytest.approx(s, rel=1e-12)

    def test_routes_agree(self):
        inst = random_instance(np.random.default_rng(77), n_max=14)
        a = quadrature_moments(inst.spec, inst.Y)
        b = quadrature_moments(inst.spec, inst.Y, method="tensor")
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(b.variance, a.variance, rtol=1e-8)
        assert b.sigma_mean == pytest.approx(a.sigma_mean, rel=1e-8)

    def test_gibbs_million_draws(self):
        rng = np.random.default_rng(0)
        d = DesignMatrix.with_ones(rng.standard_normal(8))
        Y = d.X @ [1.0, 0.5] + rng.standard_normal(8)
        spec = make_model("RHZ", path_graph(8), d)
        qm = quadrature_moments(spec, Y)
        out = gibbs_gaussian(spec, Y, ChainConfig(1_000_000, seed=1))
        B = out.beta_samples
        assert np.all(np.abs(B.mean(axis=0) - qm.mean) < 3 * batch_means(B)[0])
        assert np.all(np.abs(B.var(axis=0) - qm.variance) < 3 * batch_means((B - B.mean(axis=0)) ** 2)[0])
        sig = 1 / out.tau_eps_samples
        assert abs(sig.mean() - qm.sigma_mean) < 3 * batch_means(sig)[0]

    def test_rejects_poisson(self):
        d = DesignMatrix.with_ones(np.arange(6.0))
        with pytest.raises(InvalidParameter):
            quadrature_moments(make_model("NS", None, d, family="poisson"), np.ones(6))

    def test_marginal_density_integrates_to_one(self):
        inst = random_instance(np.random.default_rng(5), n_max=14)
        qm = quadrature_moments(inst.spec, inst.Y)
        sd = np.sqrt(qm.variance[0])
        grid = qm.mean[0] + np.linspace(-30, 30, 3001) * sd
        dens = beta_marginal_density(inst.spec, inst.Y, 0, grid)
        assert integrate.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-4)
        m1 = integrate.trapezoid(grid * dens, grid)
        assert m1 == pytest.approx(qm.mean[0], abs=1e-3 * sd)

    def test_marginal_density_without_basis(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(1, 2, 12)
        Y = x + rng.standard_normal(12)
        spec = make_custom(DesignMatrix(x[:, None]), np.zeros((12, 0)), np.zeros((0, 0)))
        grid = np.linspace(0, 2, 7)
        cf = closed_form_ns(x[:, None], Y, PR)
        np.testing.assert_allclose(beta_marginal_density(spec, Y, 0, grid), cf.pdf(grid), rtol=1e-9)
