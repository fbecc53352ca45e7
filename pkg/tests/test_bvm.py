import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import integrate, stats

from sblab import bvm, exact
from sblab.core import DesignMatrix, Model, RngHandle, SparseCoef
from sblab.errors import ComplexityRefused, EmptyMixture, RankError
from sblab.priors import DimensionPrior, LaplaceSlab, log_binom


def _instance(seed, n=40, p=6, beta=(2.0, -1.5)):
    gen = np.random.default_rng(seed)
    X = DesignMatrix(gen.standard_normal((n, p)))
    b = np.zeros(p)
    b[: len(beta)] = beta
    return X, X.entries @ b + gen.standard_normal(n), SparseCoef.from_dense(b)


class TestNeighborhood:
    def test_zero_reference(self):
        X, _, _ = _instance(0)
        nb = bvm.build_neighborhood(SparseCoef.zero(6), X, A4=1.0)
        assert nb.members == [Model(())]

    def test_dimension_cap(self):
        assert bvm.neighborhood_cap(2, 4.0) == 6

    def test_membership_predicate(self, rng):
        X = DesignMatrix(rng.standard_normal((20, 7)))
        b = np.zeros(7)
        b[[0, 2, 5]] = rng.normal(0, 0.3, 3)
        ref = SparseCoef.from_dense(b)
        A4, M = 2.0, 0.5
        nb = bvm.build_neighborhood(ref, X, A4, M)
        cap = math.floor((2 + 4 / A4) * 3)
        bound = M * 3 * math.sqrt(math.log(7)) / X.x_norm
        expect = [Model(S) for k in range(min(cap, 7) + 1) for S in itertools.combinations(range(7), k)
                  if np.abs(np.delete(b, list(S))).sum() <= bound]
        assert set(nb.members) == set(expect)

    def test_budget(self, rng):
        X = DesignMatrix(rng.standard_normal((20, 40)))
        ref = SparseCoef.from_dense(np.r_[np.ones(5), np.zeros(35)])
        with pytest.raises(ComplexityRefused):
            bvm.build_neighborhood(ref, X, 1.0, budget=1000)


class TestWeights:
    def test_singleton(self, rng):
        X, y, _ = _instance(1)
        mix = bvm.bvm_weights(X, y, DimensionPrior.complexity(6), 1.0, [()])
        assert mix.weight_of(()) == 1.0

    def test_sequence_integral_oracle(self):
        y = np.array([1.4, -0.3])
        lam = 0.5
        dp = DimensionPrior.explicit([0.5, 0.3, 0.2])
        members = [(), (0,), (1,), (0, 1)]
        mix = bvm.bvm_weights(DesignMatrix(np.eye(2)), y, dp, lam, members)

        def gauss(v):
            return integrate.quad(lambda b: math.exp(-0.5 * (v - b) ** 2), -40, 40,
                                  epsabs=0, epsrel=1e-13)[0]

        raw = []
        for S in members:
            out = [v for j, v in enumerate(y) if j not in S]
            val = dp.log_weights[len(S)] - log_binom(2, len(S)) + len(S) * math.log(lam / 2)
            val += sum(math.log(gauss(y[j])) for j in S) - 0.5 * sum(v * v for v in out)
            raw.append(val)
        raw = np.exp(np.array(raw) - max(raw))
        np.testing.assert_allclose(mix.weights, raw / raw.sum(), rtol=1e-10)

    def test_exchangeable(self):
        mix = bvm.bvm_weights(DesignMatrix(np.eye(2)), np.array([0.7, 0.7]),
                              DimensionPrior.complexity(2), 1.0, [(0,), (1,)])
        assert mix.weight_of((0,)) == pytest.approx(mix.weight_of((1,)), abs=1e-12)

    def test_weight_identity(self, rng):
        X, y, ref = _instance(2, n=25, p=5)
        dp = DimensionPrior.complexity(5)
        nb = bvm.build_neighborhood(ref, X, 1.0, M=4.0)
        mix = bvm.bvm_weights(X, y, dp, 0.3, nb)
        other = bvm.flat_prior_log_weights(X, y, dp, 0.3, mix.members)
        np.testing.assert_allclose(np.exp(other), mix.weights, rtol=1e-10, atol=1e-300)

    def test_rank_deficient_excluded(self, rng):
        A = rng.standard_normal((10, 3))
        A[:, 2] = A[:, 0]
        mix = bvm.bvm_weights(DesignMatrix(A), rng.standard_normal(10),
                              DimensionPrior.complexity(3), 1.0, [(0,), (0, 2)])
        assert mix.members == [Model((0,))]
        assert [m for m, _ in mix.excluded] == [Model((0, 2))]
        with pytest.raises(EmptyMixture):
            bvm.bvm_weights(DesignMatrix(A), np.ones(10), DimensionPrior.complexity(3), 1.0,
                            [(0, 2)])

    def test_residual_decomposition(self, rng):
        X, y, _ = _instance(3, n=15, p=4)
        st = exact.model_stats(X, y, (0, 1))
        XS = X.columns((0, 1))
        B = st.beta_hat + rng.standard_normal((50, 2))
        lhs = ((y - B @ XS.T) ** 2).sum(axis=1)
        d = B - st.beta_hat
        rhs = y @ y - st.proj_sq + np.einsum("ni,ij,nj->n", d, st.precision, d)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


class TestSampling:
    def test_empty_component(self):
        mix = bvm.bvm_weights(DesignMatrix(np.eye(3)), np.ones(3), DimensionPrior.complexity(3),
                              1.0, [()])
        assert np.all(bvm.bvm_sample_array(mix, RngHandle(0), 50) == 0)
        assert all(c.s == 0 for c in bvm.bvm_sample(mix, RngHandle(0), 5))

    def test_one_dimensional_moments(self, rng):
        X, y, _ = _instance(4, n=20, p=3)
        mix = bvm.bvm_weights(X, y, DimensionPrior.complexity(3), 1.0, [(1,)])
        d = bvm.bvm_sample_array(mix, RngHandle(1), 100_000)[:, 1]
        st = mix.stats[0]
        var = float(st.covariance[0, 0])
        se_mean = math.sqrt(var / d.size)
        se_var = var * math.sqrt(2 / (d.size - 1))
        assert abs(d.mean() - st.beta_hat[0]) <= 3 * se_mean
        assert abs(d.var(ddof=1) - var) <= 3 * se_var

    def test_component_frequencies(self):
        mix = bvm.bvm_weights(DesignMatrix(np.eye(2)), np.array([1.2, 0.4]),
                              DimensionPrior.complexity(2), 1.0, [(), (0,), (1,), (0, 1)])
        d = bvm.bvm_sample_array(mix, RngHandle(2), 50_000)
        for m, w in zip(mix.members, mix.weights):
            mask = np.zeros(2, dtype=bool)
            mask[list(m.indices)] = True
            f = np.mean(np.all((d != 0) == mask, axis=1))
            assert abs(f - w) <= 3 * math.sqrt(w * (1 - w) / d.shape[0]) + 1e-12


class TestTV:
    def test_within_model_one_dimensional(self, rng):
        X, y, _ = _instance(5, n=30, p=4)
        lam = X.x_norm / X.p
        st = exact.model_stats(X, y, (0,))
        m, sd = st.beta_hat[0], math.sqrt(st.covariance[0, 0])
        tilt = lambda b: stats.norm.pdf(b, m, sd) * math.exp(-lam * abs(b))  # noqa: E731
        lo, hi = m - 14 * sd, m + 14 * sd
        pts = [0.0] if lo < 0 < hi else None
        Z = integrate.quad(tilt, lo, hi, points=pts, epsabs=0, epsrel=1e-13)[0]
        ref = 0.5 * integrate.quad(lambda b: abs(tilt(b) / Z - stats.norm.pdf(b, m, sd)), lo, hi,
                                   points=pts, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
        tv, se = bvm.within_model_tv(st, LaplaceSlab(lam))
        assert se == 0.0
        assert tv == pytest.approx(ref, abs=1e-4)

    def test_mc_against_quadrature(self, rng):
        X, y, _ = _instance(6, n=30, p=4)
        st = exact.model_stats(X, y, (0, 2))
        q, _ = bvm.within_model_tv(st, LaplaceSlab(2.0), "quadrature")
        v, se = bvm.within_model_tv(st, LaplaceSlab(2.0), "mc", mc_draws=200_000)
        assert abs(v - q) <= 3 * se + 1e-3  # MC of |h/Eh - 1| has a small ratio bias

    def test_identical_mixtures(self):
        X, y, _ = _instance(7, n=30, p=3)
        dp = DimensionPrior.complexity(3)
        mix = bvm.bvm_weights(X, y, dp, 1e-12, [(), (0,), (0, 1)])
        fake = SimpleNamespace(models=mix.members, weights=mix.weights, stats=mix.stats,
                               slab=LaplaceSlab(1e-12))
        tv = bvm.tv_upper_bound(fake, mix)
        assert tv.weight_part == pytest.approx(0.0, abs=1e-15)
        assert tv.value == pytest.approx(0.0, abs=1e-9)

    def test_disjoint(self):
        X, y, _ = _instance(8, n=30, p=3)
        post = exact.enumerate_posterior(X, y, DimensionPrior.point_mass(3, 2), LaplaceSlab(1.0))
        mix = bvm.bvm_weights(X, y, DimensionPrior.complexity(3), 1.0, [(), (0,)])
        assert bvm.tv_upper_bound(post, mix).value == pytest.approx(1.0, abs=1e-12)

    def test_bound_shrinks_with_lambda(self):
        X, y, ref = _instance(9, n=40, p=5)
        dp = DimensionPrior.complexity(5)
        vals = []
        for lam in (2.0, 0.5, 0.05):
            post = exact.enumerate_posterior(X, y, dp, LaplaceSlab(lam))
            mix = bvm.bvm_weights(X, y, dp, lam, bvm.build_neighborhood(ref, X, 1.0))
            vals.append(bvm.tv_upper_bound(post, mix).value)
        assert vals[0] > vals[1] > vals[2]

    def test_strong_signal_collapse(self):
        X, y, ref = _instance(10, n=100, p=5, beta=(3.0, -3.0))
        # p is small, so a stronger complexity penalty stands in for large p
        dp = DimensionPrior.complexity(5, 2.0, 2.0)
        lam = X.x_norm / X.p
        mix = bvm.bvm_weights(X, y, dp, lam, bvm.build_neighborhood(ref, X, 1.0))
        assert mix.weight_of((0, 1)) > 0.9
        single = bvm.bvm_weights(X, y, dp, lam, [(0, 1)])
        # the coupling bound between two normal mixtures with shared components
        tv = 0.5 * sum(abs(mix.weight_of(m) - single.weight_of(m)) for m in mix.members)
        assert tv <= 0.1


class TestCollapsed:
    def test_empty(self):
        c, P = bvm.collapsed_normal(DesignMatrix(np.eye(3)), np.ones(3), ())
        assert c.shape == (0,) and P.shape == (0, 0)

    def test_sequence(self):
        c, P = bvm.collapsed_normal(DesignMatrix(np.eye(4)), np.arange(4.0), (2,))
        assert c[0] == pytest.approx(2.0) and P[0, 0] == pytest.approx(1.0)

    def test_normal_equations(self, rng):
        X, y, _ = _instance(11, n=30, p=5)
        c, P = bvm.collapsed_normal(X, y, (0, 3, 4))
        np.testing.assert_allclose(P @ c, X.columns((0, 3, 4)).T @ y, atol=1e-10)

    def test_rank_error(self, rng):
        A = rng.standard_normal((10, 2))
        A[:, 1] = 2 * A[:, 0]
        with pytest.raises(RankError):
            bvm.collapsed_normal(DesignMatrix(A), np.ones(10), (0, 1))
