import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sblab.core import (DesignMatrix, Model, RngHandle, SparseCoef, load_design, load_vector,
                        log_likelihood, residual)
from sblab.errors import DegenerateDesign, DimensionError, ParseError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestDesignMatrix:
    def test_identity_csv(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("1,0\n0,1\n")
        X = load_design(f)
        assert (X.n, X.p) == (2, 2)
        assert X.x_norm == 1.0

    def test_pythagorean_norms(self, tmp_path):
        f = tmp_path / "x.tsv"
        f.write_text("a\tb\n3\t0\n4\t1\n")
        X = load_design(f)
        np.testing.assert_allclose(X.col_norms, [5.0, 1.0])
        assert X.x_norm == 5.0

    def test_norms_against_double_loop(self, tmp_path, rng):
        A = rng.standard_normal((20, 30))
        f = tmp_path / "x.csv"
        np.savetxt(f, A, delimiter=",")
        X = load_design(f)
        naive = []
        for j in range(30):
            acc = 0.0
            for i in range(20):
                acc += A[i, j] * A[i, j]
            naive.append(acc ** 0.5)
        assert X.x_norm == pytest.approx(max(naive), rel=1e-12)
        np.testing.assert_allclose(X.col_norms, np.sqrt(np.diag(A.T @ A)), rtol=1e-12)

    def test_ragged_rows(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("1,2\n3\n")
        with pytest.raises(ParseError):
            load_design(f)

    def test_non_numeric_cell(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("1,2\n3,x\n")
        with pytest.raises(ParseError):
            load_design(f)

    def test_zero_matrix(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("0,0\n0,0\n")
        with pytest.raises(DegenerateDesign):
            load_design(f)

    def test_response_vector(self, tmp_path):
        f = tmp_path / "y.csv"
        f.write_text("y\n1.5\n-2\n")
        np.testing.assert_array_equal(load_vector(f), [1.5, -2.0])


class TestModelAndCoef:
    def test_model_is_sorted_and_unique(self):
        assert Model.of([3, 1]).indices == (1, 3)
        with pytest.raises(Exception):
            Model((1, 1))

    def test_zero_values_forbidden(self):
        with pytest.raises(Exception):
            SparseCoef(Model((0,)), np.array([0.0]), 3)

    def test_dense_round_trip(self):
        b = np.array([0.0, 2.0, 0.0, -1.0])
        c = SparseCoef.from_dense(b)
        assert c.model.indices == (1, 3)
        np.testing.assert_array_equal(c.to_dense(), b)


class TestLikelihood:
    def test_empty_support_residual(self, rng):
        X = DesignMatrix(rng.standard_normal((5, 3)))
        y = rng.standard_normal(5)
        np.testing.assert_array_equal(residual(X, y, SparseCoef.zero(3)), y)

    def test_identity_residual(self):
        X = DesignMatrix(np.eye(3))
        b = SparseCoef(Model((1,)), np.array([2.0]), 3)
        np.testing.assert_allclose(residual(X, np.array([1.0, 2.0, 3.0]), b), [1.0, 0.0, 3.0])

    def test_exact_fit_and_scalar_case(self):
        X = DesignMatrix(np.eye(1))
        assert log_likelihood(X, np.array([2.0]), SparseCoef.zero(1)) == -2.0
        b = SparseCoef(Model((0,)), np.array([2.0]), 1)
        assert log_likelihood(X, np.array([2.0]), b) == 0.0

    def test_dense_oracle(self, rng):
        A = rng.standard_normal((8, 6))
        y = rng.standard_normal(8)
        b = SparseCoef(Model((0, 4)), np.array([0.3, -1.1]), 6)
        r = y - A @ b.to_dense()
        np.testing.assert_allclose(residual(DesignMatrix(A), y, b), r, atol=1e-12)
        assert log_likelihood(DesignMatrix(A), y, b) == pytest.approx(-0.5 * r @ r, rel=1e-12)

    def test_dimension_mismatch(self, rng):
        X = DesignMatrix(rng.standard_normal((4, 3)))
        with pytest.raises(DimensionError):
            residual(X, np.zeros(5), SparseCoef.zero(3))

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, (6, 4), elements=finite), arrays(float, 6, elements=finite),
           st.permutations(range(4)))
    def test_permutation_equivariance(self, A, y, perm):
        if np.abs(A).max() < 1e-6:
            return
        X = DesignMatrix(A)
        b = SparseCoef(Model((0, 2)), np.array([0.5, -1.5]), 4)
        Xp = X.permuted(perm)
        bp = SparseCoef.from_dense(b.to_dense()[list(perm)])
        np.testing.assert_allclose(residual(Xp, y, bp), residual(X, y, b), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, (5, 3), elements=finite), arrays(float, 5, elements=finite))
    def test_likelihood_nonpositive_and_split(self, A, y):
        if np.abs(A).max() < 1e-6:
            return
        X = DesignMatrix(A)
        b1 = SparseCoef(Model((0,)), np.array([1.0]), 3)
        b2 = SparseCoef(Model((2,)), np.array([-2.0]), 3)
        both = SparseCoef(Model((0, 2)), np.array([1.0, -2.0]), 3)
        assert log_likelihood(X, y, both) <= 0.0
        np.testing.assert_allclose(residual(X, y, both),
                                   y - A @ b1.to_dense() - A @ b2.to_dense(), atol=1e-12)


class TestRng:
    def test_same_stream_same_draws(self):
        a = RngHandle(5, (1, 2)).generator.standard_normal(4)
        b = RngHandle(5, (1, 2)).generator.standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_children_differ(self):
        h = RngHandle(5)
        assert not np.array_equal(h.child(0).generator.random(3), h.child(1).generator.random(3))
