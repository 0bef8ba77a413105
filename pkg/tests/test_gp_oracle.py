import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npforge.gp_oracle import GpPosterior, dense_posterior, diag_loglik, full_loglik, posterior, sample_posterior
from npforge.synthproc import JITTER, KERNEL_TAGS, KernelSpec, gram

LOG_2PI = math.log(2 * math.pi)


def test_empty_context_returns_prior():
    spec = KernelSpec("matern52")
    xt = np.array([-0.5, 0.0, 0.7])
    post = posterior(spec, [], [], xt)
    np.testing.assert_array_equal(post.mean, 0.0)
    np.testing.assert_allclose(post.cov, gram(spec, xt) + JITTER * np.eye(3), atol=0)


def test_interpolates_noiseless_observation():
    post = posterior(KernelSpec("eq"), [0.3], [1.7], [0.3])
    assert post.mean[0] == pytest.approx(1.7, abs=1e-9)
    assert post.var[0] <= 10 * JITTER


def test_three_context_two_targets_matches_dense_inverse():
    rng = np.random.default_rng(0)
    spec = KernelSpec("matern52")
    xc, yc, xt = rng.uniform(-2, 2, 3), rng.normal(size=3), rng.uniform(-2, 2, 2)
    a, b = posterior(spec, xc, yc, xt), dense_posterior(spec, xc, yc, xt)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-8)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-8)


def test_full_loglik_at_mean_with_identity_cov():
    post = GpPosterior(np.zeros(4), np.arange(4.0), np.eye(4))
    assert full_loglik(post, np.arange(4.0)) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)


def test_one_dimensional_reduces_to_scalar_density():
    post = GpPosterior(np.zeros(1), np.array([0.4]), np.array([[2.5]]))
    y = 1.3
    ref = -0.5 * (LOG_2PI + math.log(2.5) + (y - 0.4) ** 2 / 2.5)
    assert full_loglik(post, [y]) == pytest.approx(ref, abs=1e-13)
    assert diag_loglik(post, [y]) == pytest.approx(ref, abs=1e-13)


def _random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_full_loglik_matches_dense_solve_oracle():
    rng = np.random.default_rng(1)
    C = _random_spd(rng, 4)
    mu, y = rng.normal(size=4), rng.normal(size=4)
    r = y - mu
    ref = -0.5 * (r @ np.linalg.solve(C, r) + np.linalg.slogdet(C)[1] + 4 * LOG_2PI) / 4
    assert full_loglik(GpPosterior(np.zeros(4), mu, C), y) == pytest.approx(ref, abs=1e-8)


def test_diag_loglik_matches_scalar_sums():
    rng = np.random.default_rng(2)
    C = _random_spd(rng, 4)
    mu, y = rng.normal(size=4), rng.normal(size=4)
    ref = np.mean([-0.5 * (LOG_2PI + math.log(C[i, i]) + (y[i] - mu[i]) ** 2 / C[i, i]) for i in range(4)])
    assert diag_loglik(GpPosterior(np.zeros(4), mu, C), y) == pytest.approx(ref, abs=1e-12)


def test_diagonal_covariance_full_equals_diag():
    rng = np.random.default_rng(3)
    C = np.diag(rng.uniform(0.2, 2.0, 5))
    mu, y = rng.normal(size=5), rng.normal(size=5)
    post = GpPosterior(np.zeros(5), mu, C)
    assert full_loglik(post, y) == pytest.approx(diag_loglik(post, y), abs=1e-12)


def test_length_mismatch_raises():
    post = GpPosterior(np.zeros(2), np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        full_loglik(post, [1.0])
    with pytest.raises(ValueError):
        diag_loglik(post, [1.0, 2.0, 3.0])


def test_zero_covariance_draws_equal_mean():
    post = GpPosterior(np.zeros(3), np.array([1.0, 2.0, 3.0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(sample_posterior(post, 5, np.random.default_rng(0)), np.tile(post.mean, (5, 1)))


def test_sample_mean_within_monte_carlo_error():
    spec = KernelSpec("eq")
    post = posterior(spec, [-0.5, 0.5], [1.0, -1.0], [-0.3, 0.0, 0.4])
    n = 100_000
    draws = sample_posterior(post, n, np.random.default_rng(4))
    se = np.sqrt(post.var / n)
    assert np.all(np.abs(draws.mean(axis=0) - post.mean) < 3 * se + 1e-12)


def test_sampling_is_seed_deterministic():
    post = posterior(KernelSpec("matern52"), [0.0], [1.0], [0.2, 0.5])
    a = sample_posterior(post, 3, np.random.default_rng(5))
    b = sample_posterior(post, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(KERNEL_TAGS), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31))
def test_conditioning_matches_dense_oracle(tag, nc, nt, seed):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(tag)
    xc, xt = rng.uniform(-2, 2, nc), rng.uniform(-2, 2, nt)
    yc = rng.normal(size=nc)
    a, b = posterior(spec, xc, yc, xt), dense_posterior(spec, xc, yc, xt)
    scale = 1.0 + np.abs(b.mean).max()
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-8 * scale)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-8)
