import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smgd.core import NumericError
from smgd.estimators import (
    CostProblem,
    EstimatorSpec,
    enumerate_expected_l1,
    estimator_realizations,
    expected_norm,
    finite_sum_quadratic,
    half_norm_squared,
    linear_components,
    make_problem,
    opposing_pair,
    partial_shuffle,
    random_finite_sum_quadratic,
    random_separable_quadratic,
    sample_gradient,
    sample_gradients,
    sample_indices,
    separable_quadratic,
    subset_gradients,
    unbiasedness_check,
)
from smgd.rng import substream


def small_finite_sum(m, n, seed):
    return random_finite_sum_quadratic(n, m, substream(seed, 4), spread=0.7)


class TestCostProblem:
    def test_mu_above_L_rejected(self):
        with pytest.raises(ValueError):
            CostProblem(1, lambda x: 0.0, lambda x: np.zeros(1), lipschitz_L=1.0, strong_mu=2.0)

    def test_wrong_minimizer_rejected(self):
        with pytest.raises(ValueError):
            CostProblem(1, lambda x: float(x @ x), lambda x: 2 * x, minimizer=np.array([0.1]))

    def test_inconsistent_components_rejected(self):
        comps = [(lambda x: float(x @ x), lambda x: 2 * x)] * 2
        with pytest.raises(ValueError):
            CostProblem(2, lambda x: float(x @ x) + 1.0, lambda x: 2 * x, components=comps)

    def test_separable_quadratic_metadata(self):
        p = separable_quadratic([1.0, 3.0], [0.5, -1.0])
        assert p.lipschitz_L == 3.0 and p.strong_mu == 1.0
        np.testing.assert_allclose(p.gradient(np.array([1.5, 0.0])), [1.0, 3.0])
        np.testing.assert_allclose(p.value(np.array([1.5, 0.0])), 0.5 * 1 + 0.5 * 3)

    def test_finite_sum_full_mean_is_exact_gradient(self):
        p = small_finite_sum(6, 3, 0)
        x = np.array([0.3, -1.2, 2.0])
        np.testing.assert_array_equal(p.component_gradients(x).mean(axis=0), p.gradient(x))
        np.testing.assert_allclose(np.max(np.abs(p.gradient(p.minimizer))), 0.0, atol=1e-10)

    def test_values_matches_value(self):
        p = small_finite_sum(4, 2, 1)
        X = substream(3).normal(size=(7, 2))
        np.testing.assert_allclose(p.values(X), [p.value(r) for r in X], rtol=1e-13)

    def test_component_gradient_finiteness(self):
        comps = [(lambda x: 0.0, lambda x: np.array([np.inf])), (lambda x: 0.0, lambda x: np.array([0.0]))]
        p = CostProblem(1, lambda x: 0.0, lambda x: np.array([np.inf]), components=comps)
        with pytest.raises(NumericError, match="component 0"):
            p.component_gradients(np.zeros(1))


class TestEstimatorSpec:
    def test_minibatch_needs_k(self):
        with pytest.raises(ValueError):
            EstimatorSpec("minibatch")

    def test_k_above_m_rejected(self):
        with pytest.raises(ValueError):
            sample_gradient(opposing_pair(), EstimatorSpec.minibatch(3), np.zeros(1), 1.0, substream(0))

    def test_uniform_needs_components(self):
        with pytest.raises(ValueError):
            EstimatorSpec.uniform().validate(half_norm_squared(2))


class TestSampleGradient:
    def test_exact_has_no_variance(self):
        p = half_norm_squared(3)
        x = np.array([0.1, -2.0, 0.5])
        for seed in range(5):
            np.testing.assert_array_equal(sample_gradient(p, EstimatorSpec.exact(), x, 1.0, substream(seed)).values, x)

    def test_opposing_pair_full_batch_is_zero(self):
        p = opposing_pair()
        for seed in range(20):
            g = sample_gradient(p, EstimatorSpec.minibatch(2), np.array([0.7]), 1.0, substream(seed))
            np.testing.assert_array_equal(g.values, [0.0])

    def test_opposing_pair_single_draw_frequency(self):
        p = opposing_pair()
        N = 100_000
        draws = sample_gradients(p, EstimatorSpec.minibatch(1), np.zeros(1), substream(2), N)
        freq = np.mean(draws[:, 0] == 1.0)
        assert abs(freq - 0.5) < 0.006
        assert set(np.unique(draws)) == {-1.0, 1.0}

    def test_scalar_and_vector_paths_have_the_same_law(self):
        p = small_finite_sum(5, 2, 3)
        x = np.array([0.2, 0.4])
        spec = EstimatorSpec.minibatch(2)
        scalar = np.array([sample_gradient(p, spec, x, 1.0, substream(7, i)).values for i in range(4000)])
        vector = sample_gradients(p, spec, x, substream(8), 4000)
        se = np.sqrt(scalar.var(axis=0) / 4000 + vector.var(axis=0) / 4000)
        assert np.all(np.abs(scalar.mean(axis=0) - vector.mean(axis=0)) < 4 * se)

    def test_clip_event_set(self):
        g = sample_gradient(half_norm_squared(2), EstimatorSpec.exact(), np.array([0.5, -2.0]), 1.0, substream(0))
        assert not g.clip_event

    def test_bad_point_shape(self):
        with pytest.raises(ValueError):
            sample_gradient(half_norm_squared(2), EstimatorSpec.exact(), np.zeros(3), 1.0, substream(0))


class TestWithoutReplacement:
    @given(m=st.integers(1, 12), data=st.data())
    def test_partial_shuffle_draws_distinct_indices(self, m, data):
        k = data.draw(st.integers(1, m))
        idx = partial_shuffle(m, k, substream(data.draw(st.integers(0, 1000))))
        assert idx.size == k and len(set(idx.tolist())) == k
        assert idx.min() >= 0 and idx.max() < m

    def test_subset_frequencies_chi_square(self):
        m, k, N = 5, 2, 60_000
        p = linear_components(np.eye(m))
        idx = sample_indices(p, EstimatorSpec.minibatch(k), substream(4), N)
        counts = Counter(map(tuple, idx.tolist()))
        n_subsets = math.comb(m, k)
        assert len(counts) == n_subsets
        expected = N / n_subsets
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        # 9 degrees of freedom; mean 9, sd sqrt(18)
        assert chi2 < 9 + 4 * math.sqrt(18)
        # per-subset 4 sigma
        sd = math.sqrt(N * (1 / n_subsets) * (1 - 1 / n_subsets))
        assert all(abs(c - expected) < 4 * sd for c in counts.values())

    def test_scalar_sampler_frequencies(self):
        m, k, N = 4, 2, 12_000
        gen = substream(6)
        counts = Counter(tuple(partial_shuffle(m, k, gen).tolist()) for _ in range(N))
        expected = N / 6
        sd = math.sqrt(N * (1 / 6) * (5 / 6))
        assert len(counts) == 6 and all(abs(c - expected) < 4 * sd for c in counts.values())


class TestUnbiasedness:
    def test_exact_z_scores_are_zero(self):
        rep = unbiasedness_check(half_norm_squared(3), EstimatorSpec.exact(), np.array([0.1, 0.2, 0.3]), 1000, 0)
        np.testing.assert_array_equal(rep.z_scores, 0.0)
        assert not rep.flagged

    def test_full_batch_z_scores_are_zero(self):
        p = small_finite_sum(4, 3, 2)
        rep = unbiasedness_check(p, EstimatorSpec.minibatch(4), np.array([1.0, 0.0, -1.0]), 1000, 0)
        np.testing.assert_array_equal(rep.z_scores, 0.0)

    def test_uniform_on_opposing_pair(self):
        rep = unbiasedness_check(opposing_pair(), EstimatorSpec.uniform(), np.zeros(1), 10_000, 1)
        assert abs(rep.mean[0]) < 4 / math.sqrt(10_000)
        assert not rep.flagged

    @pytest.mark.parametrize("spec", [EstimatorSpec.uniform(), EstimatorSpec.minibatch(2), EstimatorSpec.minibatch(5)])
    def test_stochastic_estimators_unbiased(self, spec):
        p = small_finite_sum(6, 3, 5)
        rep = unbiasedness_check(p, spec, np.array([0.5, -0.5, 1.5]), 5000, 3)
        assert not rep.flagged

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            unbiasedness_check(half_norm_squared(1), EstimatorSpec.exact(), np.zeros(1), 999, 0)


class TestEnumeration:
    def test_opposing_pair(self):
        p = opposing_pair()
        assert enumerate_expected_l1(p, np.zeros(1), 1) == 1.0
        assert enumerate_expected_l1(p, np.zeros(1), 2) == 0.0

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_nonnegative_gradients_give_equality(self, k):
        p = linear_components(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        np.testing.assert_allclose(enumerate_expected_l1(p, np.zeros(2), k), 4 / 3, rtol=1e-15)

    @pytest.mark.parametrize("norm", ["l1", "l2"])
    def test_full_batch_equals_gradient_norm(self, norm):
        p = small_finite_sum(5, 3, 7)
        x = np.array([0.3, 0.1, -0.4])
        g = p.gradient(x)
        ref = np.abs(g).sum() if norm == "l1" else np.linalg.norm(g)
        assert enumerate_expected_l1(p, x, 5, norm) == pytest.approx(ref, rel=1e-15)

    def test_independent_oracle(self):
        # brute force over index tuples, counting each subset once
        p = small_finite_sum(4, 2, 9)
        x = np.array([0.8, -0.3])
        G = p.component_gradients(x)
        seen = {}
        for a in range(4):
            for b in range(4):
                if a != b:
                    seen[frozenset((a, b))] = np.abs((G[a] + G[b]) / 2).sum()
        assert enumerate_expected_l1(p, x, 2) == pytest.approx(np.mean(list(seen.values())), rel=1e-14)

    def test_guard(self):
        p = linear_components(np.eye(30))
        with pytest.raises(ValueError, match="Monte Carlo"):
            subset_gradients(p, np.zeros(30), 15)

    def test_bad_norm(self):
        with pytest.raises(ValueError):
            enumerate_expected_l1(opposing_pair(), np.zeros(1), 1, "linf")

    def test_realizations_are_a_distribution(self):
        p = small_finite_sum(6, 2, 1)
        rows, probs = estimator_realizations(p, EstimatorSpec.minibatch(3), np.zeros(2))
        assert rows.shape == (20, 2)
        assert math.fsum(probs) == pytest.approx(1.0)
        np.testing.assert_allclose(probs @ rows, p.gradient(np.zeros(2)), atol=1e-14)

    def test_expected_norm_kinds(self):
        p = small_finite_sum(4, 2, 1)
        x = np.array([0.5, 0.5])
        assert expected_norm(p, EstimatorSpec.exact(), x) == pytest.approx(np.abs(p.gradient(x)).sum())
        assert expected_norm(p, EstimatorSpec.uniform(), x) == enumerate_expected_l1(p, x, 1)


@st.composite
def finite_sum_problems(draw):
    m = draw(st.integers(2, 8))
    n = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 10_000))
    gen = substream(seed, 4)
    p = random_finite_sum_quadratic(n, m, gen, spread=draw(st.floats(0.01, 3.0)))
    x = p.minimizer + gen.normal(0, draw(st.floats(0.0, 3.0)), n)
    return p, x


class TestMinibatchTheoremProperties:
    @given(finite_sum_problems(), st.sampled_from(["l1", "l2"]))
    def test_non_increasing_in_k(self, case, norm):
        p, x = case
        vals = [enumerate_expected_l1(p, x, k, norm) for k in range(1, p.m + 1)]
        for a, b in zip(vals, vals[1:]):
            assert b <= a * (1 + 1e-12) + 1e-15

    @given(finite_sum_problems(), st.sampled_from(["l1", "l2"]))
    def test_recursive_bound(self, case, norm):
        p, x = case
        m = p.m
        g = p.gradient(x)
        gnorm = np.abs(g).sum() if norm == "l1" else np.linalg.norm(g)
        for k in range(1, m):
            lhs = enumerate_expected_l1(p, x, k, norm)
            rhs = (m / k) * gnorm + ((m - k) / k) * enumerate_expected_l1(p, x, m - k, norm)
            assert lhs <= rhs * (1 + 1e-12) + 1e-15

    @given(finite_sum_problems())
    def test_endpoint_identity(self, case):
        p, x = case
        assert enumerate_expected_l1(p, x, p.m) == pytest.approx(np.abs(p.gradient(x)).sum(), rel=1e-13, abs=1e-15)


class TestProblemFamilies:
    def test_random_separable_isotropic(self):
        p = random_separable_quadratic(4, substream(0), isotropic=True)
        assert p.lipschitz_L == p.strong_mu

    def test_random_finite_sum_components_disagree_at_minimum(self):
        p = small_finite_sum(6, 3, 11)
        G = p.component_gradients(p.minimizer)
        assert np.abs(G).sum() > 0
        np.testing.assert_allclose(G.mean(axis=0), 0.0, atol=1e-12)
        D = np.array([c for c in p.params["curvatures"]]) if "curvatures" in p.params else None
        if D is not None:
            assert np.all(D > 0)

    def test_make_problem(self):
        assert make_problem("half_norm_squared", n=3).dimension == 3
        assert make_problem("finite_sum_quadratic", n=2, m=5, seed=1).m == 5
        p = make_problem("finite_sum_quadratic", curvatures=[[1.0], [3.0]], centers=[[0.0], [1.0]])
        np.testing.assert_allclose(p.minimizer, [0.75])

    def test_make_problem_fails_closed(self):
        with pytest.raises(ValueError, match="unknown parameters"):
            make_problem("half_norm_squared", n=2, dims=3)
        with pytest.raises(ValueError, match="unknown problem family"):
            make_problem("rosenbrock")

    def test_finite_sum_metadata(self):
        p = finite_sum_quadratic([[1.0, 2.0], [3.0, 2.0]], [[0.0, 1.0], [1.0, -1.0]])
        np.testing.assert_allclose(p.minimizer, [0.75, 0.0])
        assert p.lipschitz_L == 3.0 and p.strong_mu == 2.0
