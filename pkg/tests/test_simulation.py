"""Covariate recipes, generating models, metrics and the study runner."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rsrlab.bases import DesignMatrix
from rsrlab.datasets import SAT_ROLES, data_path, read_dataset, us48_graph
from rsrlab.errors import InvalidParameter
from rsrlab.graph import laplacian_eigen
from rsrlab.samplers import ChainConfig
from rsrlab.simulation import (STUDIES, CovariateRecipe, ReplicateFit, SpatialEffect, agreement_classify,
                               analysis_layout, compose_covariate, decompose_covariate, gen_covariate,
                               gen_response, overfit_csv, overfit_demo, read_fits_csv, run_simulation,
                               study_covariates, summarize_fits)

from conftest import grid_graph, path_graph


@pytest.fixture(scope="module")
def us48_eig():
    return laplacian_eigen(us48_graph())


class TestCovariates:
    def test_no_targets_constant(self, us48_eig):
        l = gen_covariate(us48_eig, CovariateRecipe(0, l_bar=3.0), np.random.default_rng(0))
        np.testing.assert_allclose(l, 3.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 47), st.floats(0.1, 5.0), st.floats(-5.0, 5.0), st.integers(0, 10_000))
    def test_moments_by_construction(self, k, s_l, l_bar, seed):
        eig = laplacian_eigen(us48_graph())
        l = gen_covariate(eig, CovariateRecipe(k, s_l=s_l, l_bar=l_bar), np.random.default_rng(seed))
        assert l.mean() == pytest.approx(l_bar, abs=1e-10)
        assert l.std(ddof=1) == pytest.approx(s_l, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_round_trip(self, seed):
        eig = laplacian_eigen(grid_graph(4, 5))
        l = np.random.default_rng(seed).standard_normal(20) * 3 + 1
        s_l, l_bar, rho = decompose_covariate(eig, l)
        np.testing.assert_allclose(compose_covariate(eig, rho, s_l, l_bar), l, atol=1e-10)
        assert np.linalg.norm(rho) == pytest.approx(1.0, abs=1e-10)

    def test_targets_smallest_nonzero(self, us48_eig):
        idx = CovariateRecipe(10).targets(48)
        np.testing.assert_array_equal(idx, np.arange(37, 47))
        assert np.all(us48_eig.lam[idx] > 0)

    def test_custom_indices_checked(self):
        with pytest.raises(InvalidParameter):
            CovariateRecipe(2, indices=(0, 47)).targets(48)

    def test_study_covariates_fixed(self, us48_eig):
        a = study_covariates(STUDIES["sim2"], us48_eig, 7)
        b = study_covariates(STUDIES["sim2"], us48_eig, 7)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        _, _, rho = decompose_covariate(us48_eig, a[0])
        assert np.count_nonzero(np.abs(rho) > 1e-10) == math.ceil(0.2 * 48)


class TestGenerating:
    def setup_method(self):
        self.g = us48_graph()
        rng = np.random.default_rng(1)
        self.d = DesignMatrix.with_ones(rng.standard_normal(48))

    def test_ns_residuals_standard_normal(self):
        rng = np.random.default_rng(2)
        res = np.concatenate([gen_response("NS", self.g, self.d, [1.0, 2.0], rng=rng) - self.d.X @ [1.0, 2.0]
                              for _ in range(40)])
        assert stats.kstest(res, "norm").pvalue > 0.01

    def test_icar_effect_sums_to_zero(self):
        nu = SpatialEffect("ICAR", self.g, self.d).draw(np.random.default_rng(3))
        assert abs(nu.sum()) < 1e-10

    def test_rhz_effect_orthogonal(self):
        nu = SpatialEffect("RHZ", self.g, self.d).draw(np.random.default_rng(4))
        assert np.linalg.norm(self.d.X.T @ nu) / np.linalg.norm(nu) <= 1e-8

    def test_rhz_effect_precision(self):
        eff = SpatialEffect("RHZ", self.g, self.d)
        rng = np.random.default_rng(5)
        draws = np.array([eff.draw(rng, 2.0) for _ in range(20_000)])
        from rsrlab.bases import complement_basis
        L = complement_basis(self.d).W
        want = L @ np.linalg.inv(2.0 * L.T @ self.g.laplacian() @ L) @ L.T
        S = draws.T @ draws / len(draws)
        assert np.linalg.norm(S - want) / np.linalg.norm(want) < 0.05

    def test_poisson_counts(self):
        y = gen_response("ICAR", self.g, self.d, [1.0, 0.2], family="poisson", rng=np.random.default_rng(6))
        assert np.all(y == np.round(y)) and np.all(y >= 0)

    def test_coefficient_count_checked(self):
        with pytest.raises(InvalidParameter):
            gen_response("NS", self.g, self.d, [1.0], rng=np.random.default_rng(0))

    def test_unknown_family(self):
        with pytest.raises(InvalidParameter):
            gen_response("NS", self.g, self.d, [1.0, 1.0], family="binomial", rng=np.random.default_rng(0))


class TestLayout:
    def test_sim2_ns_generation_omits_x1(self):
        x = np.random.default_rng(0).standard_normal((48, 2))
        lay = analysis_layout(STUDIES["sim2"], "NS", "RHZ", x[:, 0], x[:, 1])
        assert lay.cols == (0, 2)
        lay = analysis_layout(STUDIES["sim2"], "NS", "ICAR", x[:, 0], x[:, 1])
        assert lay.cols == (1, 2) and not lay.design.with_intercept

    def test_sim1_full(self):
        x = np.random.default_rng(0).standard_normal(48)
        assert analysis_layout(STUDIES["sim1"], "RHZ", "NS", x, None).cols == (0, 1)


class TestMetrics:
    @pytest.mark.parametrize("r, s, want", [((0, 2), (0, 2), "Agree"), ((3, 4), (3, 4), "Agree"),
                                            ((0, 2), (3, 4), "RHZ+"), ((3, 4), (0, 2), "NS+")])
    def test_agreement(self, r, s, want):
        assert agreement_classify(r, s, 1.0) == want

    def test_cell_metrics_by_hand(self):
        fits = [ReplicateFit("NS", "NS", 0, 1, 2.0, 2.1, 0.1, 1.5, 2.5),
                ReplicateFit("NS", "NS", 1, 1, 2.0, 1.7, 0.1, 1.8, 1.9),
                ReplicateFit("NS", "NS", 0, 2, 0.0, 0.3, 0.1, 0.1, 0.5),
                ReplicateFit("NS", "NS", 1, 2, 0.0, 0.0, 0.1, -0.2, 0.2)]
        cells, _ = summarize_fits(fits, ["NS"], ["NS"])
        c = cells[0]
        assert c.coverage == 50.0 and c.power == 100.0 and c.type_s == 50.0
        assert c.mse == pytest.approx((0.1**2 + 0.3**2) / 2)

    def test_comparison_by_hand(self):
        fits = [ReplicateFit("ICAR", "NS", 0, 1, 2.0, 2.0, 0.1, 1.0, 3.0),
                ReplicateFit("ICAR", "RHZ", 0, 1, 2.0, 2.0, 0.1, 1.5, 1.9),
                ReplicateFit("ICAR", "NS", 1, 1, 2.0, 2.0, 0.1, 1.0, 3.0),
                ReplicateFit("ICAR", "RHZ", 1, 1, 2.0, 2.0, 0.1, 1.02, 2.97)]
        _, comps = summarize_fits(fits, ["ICAR"], ["NS", "RHZ"])
        c = comps[0]
        assert (c.agree, c.ns_plus, c.rhz_plus, c.nesting) == (50.0, 50.0, 0.0, 100.0)
        assert c.max_gap == pytest.approx(1.1)
        assert c.gap_below_05 == 50.0


class TestRunner:
    def test_one_replicate_degenerate(self):
        rep = run_simulation("sim1", us48_graph(), 1, ChainConfig(600, seed=0))
        for c in rep.cells:
            assert c.coverage in (0.0, 100.0) and c.power in (0.0, 100.0)
        assert len(rep.cells) == 9
        assert "Coverage of beta1" in rep.table()

    def test_deterministic_and_round_trip(self):
        run = lambda: run_simulation("sim2_small", path_graph(12), 2, ChainConfig(500), master_seed=3,
                                     gens=("NS",), kinds=("NS", "RHZ"))
        a, b = run(), run()
        assert a.fits_csv() == b.fits_csv()
        assert a.cells_csv() == b.cells_csv() and a.table() == b.table()
        study, fits = read_fits_csv(a.fits_csv())
        assert study == "sim2_small" and len(fits) == len(a.fits)
        cells, _ = summarize_fits(fits, ["NS"], ["NS", "RHZ"])
        for attr in ("coverage", "type_s", "mse"):
            np.testing.assert_array_equal([getattr(c, attr) for c in cells], [getattr(c, attr) for c in a.cells])

    def test_poisson_small(self):
        rep = run_simulation("sim3_small", grid_graph(5, 5), 2, ChainConfig(2000), master_seed=1, gens=("ICAR",))
        assert {c.kind for c in rep.cells} == {"NS", "RHZ", "ICAR"}
        assert all(np.isfinite(f.mean) for f in rep.fits if not f.failed)

    def test_rejects_zero_replicates(self):
        with pytest.raises(InvalidParameter):
            run_simulation("sim1", us48_graph(), 0, ChainConfig(100))


class TestOverfit:
    def setup_method(self):
        ds = read_dataset(data_path("sat_fixture.csv"), SAT_ROLES)
        x = ds.covariates[:, 0]
        self.X = DesignMatrix.with_ones(np.column_stack([x, x**2]))
        self.y = ds.y

    def test_baseline_is_ns(self):
        from rsrlab.analytics import ns_posterior_sigma_mean
        from rsrlab.model import PriorConfig
        steps = overfit_demo(self.X, self.y)
        s = ns_posterior_sigma_mean(self.X.X, self.y, PriorConfig())
        np.testing.assert_allclose(steps[0].variance, np.diag(np.linalg.inv(self.X.X.T @ self.X.X)) * s)
        np.testing.assert_allclose(steps[0].mean, np.linalg.lstsq(self.X.X, self.y, rcond=None)[0])

    def test_stops_while_sigma_defined(self):
        steps = overfit_demo(self.X, self.y)
        # (a_eps - 1) + (45 - k)/2 > 0 holds for k = 0..43
        assert [s.added for s in steps] == list(range(44))

    def test_variances_trend_down(self):
        steps = overfit_demo(self.X, self.y)
        k = np.array([s.added for s in steps])
        for j in range(3):
            v = np.array([s.variance[j] for s in steps])
            assert stats.spearmanr(k, v).statistic < 0

    def test_point_estimates_unchanged(self):
        steps = overfit_demo(self.X, self.y)
        for s in steps:
            np.testing.assert_allclose(s.mean, steps[0].mean, rtol=1e-8)

    def test_csv_header(self):
        text = overfit_csv(overfit_demo(self.X, self.y, order="basis"), self.X.names)
        assert text.splitlines()[0] == ("added,sigma_mean,mean_intercept,mean_x1,mean_x2,"
                                        "var_intercept,var_x1,var_x2")
