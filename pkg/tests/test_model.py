import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from hybrid_ibp import model
from hybrid_ibp.model import FeatureMatrix, HyperParams

import oracles

LOG_N0 = -0.918939  # log N(0; 0, 1)


def _mean_within(samples, expected, n_se):
    samples = np.asarray(samples, float)
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - expected) <= n_se * se, (samples.mean(), expected, se)


# -- IBP prior ---------------------------------------------------------------

def test_restaurant_alpha_zero_is_empty(rng):
    Z = model.sample_ibp_restaurant(10, 0.0, rng)
    assert Z.n_rows == 10 and Z.n_features == 0


def test_restaurant_first_row_poisson(rng):
    draws = [model.sample_ibp_restaurant(1, 2.0, rng).n_features for _ in range(100_000)]
    _mean_within(draws, 2.0, 3)


def test_restaurant_columns_in_creation_order(rng):
    for _ in range(50):
        Z = model.sample_ibp_restaurant(6, 3.0, rng)
        births = model.birth_rows(Z)
        assert np.all(np.diff(births) >= 0)
        assert np.all(Z.counts >= 1)


@pytest.mark.parametrize("n_rows, alpha", [(0, 1.0), (3, -0.5)])
def test_restaurant_rejects_bad_input(rng, n_rows, alpha):
    with pytest.raises(ValueError):
        model.sample_ibp_restaurant(n_rows, alpha, rng)


def test_log_ibp_prior_empty():
    assert model.log_ibp_prior(np.zeros((2, 0)), 1.0, n_rows=2) == pytest.approx(-1.5)


def test_log_ibp_prior_single_column():
    # e^-1 * (1/2) * e^-1/2 by direct path enumeration
    assert model.log_ibp_prior([[1], [0]], 1.0) == pytest.approx(-2.19315, abs=1e-5)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.5])
def test_log_ibp_prior_matches_path_enumeration(alpha):
    paths = oracles.restaurant_paths_n2(alpha, max_birth=3)
    for (row1, row2), p in paths.items():
        Z = np.array([row1, row2], dtype=np.int8).reshape(2, -1)
        assert math.exp(model.log_ibp_prior(Z, alpha, n_rows=2)) == pytest.approx(p, rel=1e-10)
    total = sum(math.exp(model.log_ibp_prior(np.array([r1, r2]).reshape(2, -1), alpha, n_rows=2))
                for r1, r2 in paths)
    assert total == pytest.approx(1.0 - oracles.truncation_mass_n2(alpha), abs=1e-12)


def test_log_ibp_prior_rejects_zero_column_and_bad_alpha():
    with pytest.raises(ValueError):
        model.log_ibp_prior([[1, 0], [1, 0]], 1.0)
    with pytest.raises(ValueError):
        model.log_ibp_prior([[1], [0]], 0.0)


def test_log_ibp_prior_row_permutation_with_same_birth_profile():
    Z = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    perm = [1, 0, 2, 3]  # births still one per row in rows 0 and 1
    assert model.log_ibp_prior(Z[perm], 1.3) == pytest.approx(model.log_ibp_prior(Z, 1.3), abs=1e-12)


def test_path_prior_vs_class_prior_identity(rng):
    # path = class + sum log K_h! - sum log k_n!
    from scipy.special import gammaln
    for _ in range(30):
        Z = model.sample_ibp_restaurant(5, 2.0, rng).values
        if Z.shape[1] == 0:
            continue
        _, mult = np.unique(Z.T, axis=0, return_counts=True)
        per_row = np.bincount(model.birth_rows(Z), minlength=5)
        expected = (model.log_ibp_class_prior(Z, 2.0) + gammaln(mult + 1).sum()
                    - gammaln(per_row + 1).sum())
        assert model.log_ibp_prior(Z, 2.0) == pytest.approx(expected, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int8, (5, 3), elements=st.integers(0, 1)), st.permutations(range(5)))
def test_class_prior_row_permutation_invariant(Z, perm):
    Z = Z[:, Z.sum(axis=0) > 0]
    a = model.log_ibp_class_prior(Z, 1.7, n_rows=5)
    b = model.log_ibp_class_prior(Z[list(perm)], 1.7, n_rows=5)
    assert a == pytest.approx(b, abs=1e-10)


def test_class_prior_sums_to_one_over_classes_n2():
    # classes for N=2: multisets of column histories from {10, 01, 11}
    alpha, total = 1.2, 0.0
    for a in range(8):
        for b in range(8):
            for c in range(8):
                cols = [[1, 0]] * a + [[0, 1]] * b + [[1, 1]] * c
                Z = np.array(cols, dtype=np.int8).T.reshape(2, -1)
                total += math.exp(model.log_ibp_class_prior(Z, alpha, n_rows=2))
    assert total == pytest.approx(1.0, abs=1e-6)


# -- finite beta-Bernoulli --------------------------------------------------

def test_finite_beta_bernoulli_moments(rng):
    pis, ms = [], []
    for _ in range(100_000):
        pi, Z = model.sample_finite_beta_bernoulli(5, 2, 2.0, rng)
        pis.append(pi[0])
        ms.append(Z.counts[0])
    _mean_within(pis, 0.5, 3)
    _mean_within(ms, 2.5, 3)


@pytest.mark.parametrize("K, alpha", [(0, 1.0), (1, 0.0)])
def test_finite_beta_bernoulli_rejects(rng, K, alpha):
    with pytest.raises(ValueError):
        model.sample_finite_beta_bernoulli(5, K, alpha, rng)


# -- likelihoods --------------------------------------------------------------

def test_log_lik_full_zero_residual():
    assert model.log_lik_full([[2.0]], [[1]], [[2.0]], 1.0) == pytest.approx(LOG_N0, abs=1e-6)


def test_log_lik_full_unit_residual():
    assert model.log_lik_full([[1.0]], [[0]], [[5.0]], 1.0) == pytest.approx(-1.418939, abs=1e-6)


def test_log_lik_full_matches_entrywise(rng):
    for _ in range(10):
        N, K, D = rng.integers(1, 5, size=3)
        X = rng.standard_normal((N, D))
        Z = rng.integers(0, 2, size=(N, K))
        A = rng.standard_normal((K, D))
        s = rng.uniform(0.3, 2.0)
        assert model.log_lik_full(X, Z, A, s) == pytest.approx(
            oracles.entrywise_loglik(X, Z, A, s), abs=1e-9)


def test_log_lik_full_dimension_mismatch():
    with pytest.raises(ValueError):
        model.log_lik_full(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)), 1.0)


def test_collapsed_empty_z():
    assert model.collapsed_log_lik([[0.0]], np.zeros((1, 0)), 1.0, 1.0) == pytest.approx(LOG_N0, abs=1e-6)


def test_collapsed_single_feature_example(rng):
    X, Z = [[1.0], [0.0]], [[1], [0]]
    value = model.collapsed_log_lik(X, Z, 1.0, 1.0)
    assert value == pytest.approx(-2.43445, abs=1e-5)
    est, log_se = oracles.mc_marginal(X, Z, 1.0, 1.0, 100_000, rng)
    assert abs(math.exp(value) - math.exp(est)) <= 3 * math.exp(log_se)


def test_collapsed_matches_gaussian_marginal(rng):
    for _ in range(25):
        N, K, D = rng.integers(1, 6), rng.integers(0, 4), rng.integers(1, 4)
        X = rng.standard_normal((N, D))
        Z = rng.integers(0, 2, size=(N, K))
        sx, sa = rng.uniform(0.3, 2.0, size=2)
        assert model.collapsed_log_lik(X, Z, sx, sa) == pytest.approx(
            oracles.gaussian_marginal_loglik(X, Z, sx, sa), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.int8, (4, 3), elements=st.integers(0, 1)), st.permutations(range(3)),
       st.integers(0, 2**31 - 1))
def test_collapsed_column_invariances(Z, perm, seed):
    X = np.random.default_rng(seed).standard_normal((4, 2))
    base = model.collapsed_log_lik(X, Z, 0.7, 1.3)
    assert model.collapsed_log_lik(X, Z[:, list(perm)], 0.7, 1.3) == pytest.approx(base, abs=1e-9)
    padded = np.hstack([Z, np.zeros((4, 1), dtype=np.int8)])
    assert model.collapsed_log_lik(X, padded, 0.7, 1.3) == pytest.approx(base, abs=1e-9)
    live = Z[:, Z.sum(axis=0) > 0]
    assert model.collapsed_log_lik(X, live, 0.7, 1.3) == pytest.approx(base, abs=1e-9)


def test_collapsed_small_sigma_a_limit(rng):
    X = rng.standard_normal((5, 3))
    Z = rng.integers(0, 2, size=(5, 2))
    got = model.collapsed_log_lik(X, Z, 1.0, 1e-6)
    assert got == pytest.approx(model.log_lik_full(X, Z, np.zeros((2, 3)), 1.0), abs=1e-6)


def test_collapsed_rejects_nonfinite():
    with pytest.raises(ValueError):
        model.collapsed_log_lik([[np.nan]], [[1]], 1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-50, 50)),
       arrays(np.int8, (3, 2), elements=st.integers(0, 1)))
def test_likelihoods_finite(X, Z):
    assert math.isfinite(model.collapsed_log_lik(X, Z, 0.5, 1.0))
    assert math.isfinite(model.log_lik_full(X, Z, np.ones((2, 2)), 0.5))


# -- conjugate updates ---------------------------------------------------------

def test_posterior_loadings_flat_prior_limit(rng):
    X = rng.normal(3.0, 1.0, size=(7, 1))
    mean, _ = model.posterior_loadings(X, np.ones((7, 1)), 1.0, 1e8)
    assert mean[0, 0] == pytest.approx(X.mean(), abs=1e-6)


def test_posterior_loadings_zero_data():
    mean, _ = model.posterior_loadings(np.zeros((4, 3)), [[1, 0], [1, 1], [0, 1], [1, 1]], 0.5, 1.0)
    assert np.all(mean == 0.0)


def test_posterior_loadings_normalizing_identity(rng):
    # p(X|Z) = p(X|Z,A) p(A) / p(A|X,Z) for any A
    X = rng.standard_normal((4, 2))
    Z = np.array([[1, 0], [1, 1], [0, 1], [1, 0]])
    sx, sa = 0.8, 1.4
    mean, cov = model.posterior_loadings(X, Z, sx, sa)
    for A in (mean, mean + 0.3 * rng.standard_normal(mean.shape)):
        log_prior = stats.norm.logpdf(A, scale=sa).sum()
        log_post = sum(stats.multivariate_normal(mean[:, d], cov).logpdf(A[:, d]) for d in range(2))
        identity = oracles.entrywise_loglik(X, Z, A, sx) + log_prior - log_post
        assert identity == pytest.approx(model.collapsed_log_lik(X, Z, sx, sa), abs=1e-9)


def test_posterior_loadings_needs_features():
    with pytest.raises(ValueError):
        model.posterior_loadings(np.zeros((3, 2)), np.zeros((3, 0)), 1.0, 1.0)


def test_sample_loadings_tiny_covariance(rng):
    mean = np.array([[1.0, -2.0], [0.5, 3.0]])
    draw = model.sample_loadings((mean, 1e-20 * np.eye(2)), rng)
    assert np.allclose(draw, mean, atol=1e-8)


def test_sample_loadings_moments(rng):
    X = rng.standard_normal((6, 1))
    Z = np.array([[1, 0], [1, 1], [0, 1], [1, 0], [0, 1], [1, 1]])
    mean, cov = model.posterior_loadings(X, Z, 0.7, 1.0)
    draws = np.array([model.sample_loadings((mean, cov), rng)[:, 0] for _ in range(100_000)])
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean[:, 0]) <= 4 * se)
    assert np.allclose(np.cov(draws.T), cov, rtol=0.05)


def test_sample_loadings_rejects_indefinite(rng):
    with pytest.raises(np.linalg.LinAlgError):
        model.sample_loadings((np.zeros((2, 1)), np.array([[1.0, 2.0], [2.0, 1.0]])), rng)


def test_sample_pi_full_count_mean(rng):
    draws = np.concatenate([model.sample_pi([5] * 10, 5, rng) for _ in range(10_000)])
    _mean_within(draws, 5 / 6, 3)


def test_sample_pi_uniform_case(rng):
    draws = np.concatenate([model.sample_pi([1] * 10, 1, rng) for _ in range(10_000)])
    _mean_within(draws, 0.5, 3)
    assert np.all((draws > 0) & (draws < 1))


def test_sample_pi_rejects_dead_feature(rng):
    with pytest.raises(ValueError):
        model.sample_pi([2, 0], 4, rng)


def test_sample_alpha_prior_only(rng):
    draws = [model.sample_alpha(0, 1, (1.0, 1.0), rng) for _ in range(100_000)]
    _mean_within(draws, 0.5, 3)
    assert min(draws) > 0


def test_sample_alpha_posterior_mean(rng):
    draws = [model.sample_alpha(4, 1000, (1.0, 1.0), rng) for _ in range(100_000)]
    _mean_within(draws, 0.58925, 3)
    assert 5 / (1 + oracles.harmonic(1000)) == pytest.approx(0.58925, abs=1e-5)


def test_sample_variances_pass_through(rng):
    hyper = HyperParams(sigma_x=0.7, sigma_a=1.3)
    X = rng.standard_normal((3, 2))
    assert model.sample_variances(X, [[1], [0], [1]], [[1.0, 2.0]], hyper, rng) == (0.7, 1.3)


def test_mh_acceptance_identical_density():
    assert model.mh_acceptance_prob(-12.5, -12.5) == 1.0


def test_sample_variances_concentrates(rng):
    N, K, D = 200, 3, 6
    Z = rng.integers(0, 2, size=(N, K))
    A = rng.standard_normal((K, D))
    X = Z @ A + 0.5 * rng.standard_normal((N, D))
    hyper = HyperParams(sigma_x=2.0, resample_sigma_x=True, resample_sigma_a=True)
    trace = []
    for i in range(3000):
        sx, sa = model.sample_variances(X, Z, A, hyper, rng)
        hyper = hyper.replace(sigma_x=sx, sigma_a=sa)
        if i >= 1000:
            trace.append(sx)
    assert np.mean(trace) == pytest.approx(0.5, rel=0.2)


# -- determinism ------------------------------------------------------------------

def test_rng_ops_are_seed_deterministic():
    def run(seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((5, 2))
        Z = model.sample_ibp_restaurant(5, 2.0, rng).values
        out = [Z, *model.sample_finite_beta_bernoulli(5, 3, 1.0, rng)[0:1]]
        Zf = np.array([[1, 0], [1, 1], [0, 1], [1, 0], [1, 1]])
        post = model.posterior_loadings(X, Zf, 0.5, 1.0)
        A = model.sample_loadings(post, rng)
        out += [A, model.sample_pi([1, 3], 5, rng), model.sample_alpha(2, 5, (1.0, 1.0), rng)]
        h = HyperParams(resample_sigma_x=True, resample_sigma_a=True)
        out += list(model.sample_variances(X, Zf, A, h, rng))
        return out

    for a, b in zip(run(11), run(11)):
        assert np.array_equal(np.asarray(a), np.asarray(b))


def test_feature_matrix_counts_track_edits():
    Z = FeatureMatrix([[1, 0], [0, 0], [1, 1]])
    Z.set(1, 1, 1)
    Z.set(0, 0, 0)
    Z.append_columns(np.array([[0], [0], [0]]))
    Z.check()
    assert list(Z.prune()) == [0, 1]
    Z.check()
    with pytest.raises(ValueError):
        FeatureMatrix([[2, 0]])


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        HyperParams(alpha=0.0)
    with pytest.raises(ValueError):
        HyperParams(sigma_x=-1.0)
