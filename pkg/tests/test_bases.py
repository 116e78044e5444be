"""Projections, complement bases, Moran bases and their weighted variants."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from rsrlab.bases import (DesignMatrix, attractive_count, complement_basis, count_hh_basis, count_rhz_basis,
                          hh_basis, moran_operator, moran_spectrum, projections, weighted_projection)
from rsrlab.datasets import SAT_ROLES, data_path, read_dataset, surrogate_graph, us48_graph
from rsrlab.errors import InsufficientBasis, InvalidParameter, RankDeficientDesign
from rsrlab.iwls import iwls_poisson

from conftest import grid_graph, path_graph


def random_design(n, p, seed, intercept=True):
    rng = np.random.default_rng(seed)
    if intercept:
        return DesignMatrix.with_ones(rng.standard_normal((n, p - 1)))
    return DesignMatrix(rng.standard_normal((n, p)))


class TestDesignMatrix:
    def test_with_ones_names(self):
        d = DesignMatrix.with_ones(np.arange(4.0), names=["z"])
        assert d.names == ("intercept", "z")
        assert d.with_intercept

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientDesign):
            DesignMatrix(np.column_stack([np.ones(5), 2 * np.ones(5)]))

    def test_too_many_columns(self):
        with pytest.raises(RankDeficientDesign):
            DesignMatrix(np.eye(3))

    def test_intercept_flag_checked(self):
        with pytest.raises(InvalidParameter):
            DesignMatrix(np.arange(4.0)[:, None], with_intercept=True)

    def test_drop_intercept(self):
        d = DesignMatrix.with_ones(np.arange(5.0))
        assert d.drop_intercept().p == 1


class TestComplementBasis:
    def test_constants_complement(self):
        L = complement_basis(DesignMatrix(np.ones((3, 1)))).W
        assert L.shape == (3, 2)
        np.testing.assert_allclose(L.sum(axis=0), 0.0, atol=1e-12)

    def test_matches_direct_projector(self):
        d = DesignMatrix(np.random.default_rng(6).standard_normal((6, 2)))
        L = complement_basis(d).W
        X = d.X
        P_perp = np.eye(6) - X @ np.linalg.solve(X.T @ X, X.T)
        np.testing.assert_allclose(L @ L.T, P_perp, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(4, 25), st.integers(1, 3), st.integers(0, 10_000))
    def test_orthonormal_and_orthogonal(self, n, p, seed):
        d = random_design(n, p, seed)
        b = complement_basis(d)
        assert b.q == n - p
        assert b.orthonormality_error() < 1e-10
        assert b.orthogonality_error(d) < 1e-10

    def test_projection_pair(self):
        d = random_design(9, 3, 1)
        pp = projections(d)
        np.testing.assert_allclose(pp.P_X @ pp.P_X, pp.P_X, atol=1e-12)
        np.testing.assert_allclose(pp.P_X + pp.P_perp, np.eye(9), atol=1e-12)
        assert np.trace(pp.P_perp) == pytest.approx(6.0)


class TestMoranOperator:
    def test_zero_adjacency(self):
        from rsrlab.graph import load_graph
        g = load_graph([], 5)
        M = moran_operator(g, projections(random_design(5, 2, 0)))
        assert np.all(M == 0)

    def test_rank_with_one_free_direction(self):
        n = 6
        d = DesignMatrix(np.eye(n)[:, : n - 1])
        M = moran_operator(path_graph(n), projections(d))
        assert np.linalg.matrix_rank(M, tol=1e-10) <= 1

    def test_spectrum_spans_moran_range(self):
        # extremize z'Az/z'z over z orthogonal to 1 with a generic optimizer
        n = 8
        g = path_graph(n)
        A = g.A.astype(float)
        lam = moran_spectrum(g, DesignMatrix(np.ones((n, 1))))

        def rq(z, sign):
            z = z - z.mean()
            return sign * (z @ A @ z) / (z @ z)

        z0 = np.random.default_rng(0).standard_normal(n)
        top = -optimize.minimize(rq, z0, args=(-1.0,), method="BFGS", options={"gtol": 1e-10}).fun
        bot = optimize.minimize(rq, z0, args=(1.0,), method="BFGS", options={"gtol": 1e-10}).fun
        assert lam[0] == pytest.approx(top, abs=1e-6)
        assert lam[-1] == pytest.approx(bot, abs=1e-6)

    def test_attractive_count_against_full_operator(self):
        g = us48_graph()
        ds = read_dataset(data_path("sat_fixture.csv"), SAT_ROLES)
        x = ds.covariates[:, 0]
        d = DesignMatrix.with_ones(np.column_stack([x, x ** 2]))
        full = np.linalg.eigvalsh(moran_operator(g, projections(d)))
        # the full operator has p extra zeros from C(X); count strict signs only
        scale = np.abs(full).max()
        n_pos = int(np.sum(full > 1e-8 * scale))
        lam = moran_spectrum(g, d)
        assert attractive_count(lam) == n_pos
        assert 0 < n_pos < 45


class TestHHBasis:
    def test_default_size(self):
        d = random_design(48, 3, 2)
        b = hh_basis(us48_graph(), d)
        assert b.q == 5

    def test_attractive_only_takes_all_positive(self):
        g, d = us48_graph(), random_design(48, 2, 3)
        b = hh_basis(g, d, attractive_only=True)
        assert b.q == attractive_count(moran_spectrum(g, d))
        assert np.all(b.moran_eigenvalues > 0)

    def test_q_zero_empty(self):
        b = hh_basis(path_graph(6), random_design(6, 2, 0), q=0)
        assert b.W.shape == (6, 0)

    def test_too_many_requested(self):
        with pytest.raises(InsufficientBasis):
            hh_basis(path_graph(6), random_design(6, 2, 0), q=5)

    def test_columns_are_operator_eigenvectors(self):
        g, d = grid_graph(4, 5), random_design(20, 2, 4)
        b = hh_basis(g, d, q=6)
        M = moran_operator(g, projections(d))
        np.testing.assert_allclose(M @ b.W, b.W * b.moran_eigenvalues, atol=1e-10)
        assert b.orthonormality_error() < 1e-10
        assert b.orthogonality_error(d) < 1e-10
        assert np.all(np.diff(b.moran_eigenvalues) <= 1e-12)


class TestWeightedBases:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.d = DesignMatrix.with_ones(rng.standard_normal(30))
        self.y = rng.poisson(np.exp(1.0 + 0.3 * self.d.X[:, 1]))
        self.fit = iwls_poisson(self.d, self.y)

    def test_unit_weights_reduce_to_plain(self):
        M = weighted_projection(self.d, np.ones(30))
        np.testing.assert_allclose(M, projections(self.d).P_perp, atol=1e-12)

    def test_idempotent_trace(self):
        M = weighted_projection(self.d, self.fit.h_diag)
        np.testing.assert_allclose(M @ M, M, atol=1e-10)
        assert np.trace(M) == pytest.approx(28.0, abs=1e-10)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(InvalidParameter):
            weighted_projection(self.d, np.zeros(30))

    def test_rhz_unit_weights_gaussian_span(self):
        b = count_rhz_basis(self.d, np.ones(30))
        L = complement_basis(self.d).W
        np.testing.assert_allclose(b.W @ b.W.T, L @ L.T, atol=1e-10)

    def test_rhz_weighted_orthogonality(self):
        h = self.fit.h_diag
        b = count_rhz_basis(self.d, h, grid_graph(5, 6))
        assert b.q == 28
        # the predictor-scale basis is orthogonal to X under the weight H
        np.testing.assert_allclose(self.d.X.T @ (h[:, None] * b.effective), 0.0, atol=1e-9)
        assert b.F.shape == (28, 28)

    def test_hh_weighted(self):
        r = 1.0 / self.fit.w_diag
        b = count_hh_basis(grid_graph(5, 6), self.d, r, q=4)
        np.testing.assert_allclose((np.sqrt(r)[:, None] * self.d.X).T @ b.W, 0.0, atol=1e-10)
        assert b.orthonormality_error() < 1e-10

    def test_surrogate_dimensions(self):
        g = surrogate_graph()
        rng = np.random.default_rng(1)
        d = DesignMatrix.with_ones(rng.standard_normal(194))
        b = count_rhz_basis(d, np.exp(rng.normal(0, 0.3, 194)), g)
        assert b.W.shape == (194, 192)
