"""Exact GP conditioning: the ground-truth predictive for kernel-backed processes."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .synthproc import JITTER, CholeskyError, gram, jittered_cholesky

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GpPosterior:
    inputs: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self):
        return np.diag(self.cov).copy()

    def marginal(self, idx):
        idx = np.atleast_1d(idx)
        return GpPosterior(self.inputs[idx], self.mean[idx], self.cov[np.ix_(idx, idx)])


def posterior(spec, xc, yc, xt):
    """Posterior of the process at ``xt`` given noiseless-up-to-jitter observations.

    Both the context and target blocks carry the same diagonal jitter used when
    sampling, so the result is the exact conditional of the sampling law.
    """
    xc = np.asarray(xc, dtype=np.float64).reshape(-1)
    yc = np.asarray(yc, dtype=np.float64).reshape(-1)
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    Ktt = gram(spec, xt) + JITTER * np.eye(xt.size)
    if xc.size == 0:
        return GpPosterior(xt, np.zeros(xt.size), Ktt)
    L, _ = jittered_cholesky(gram(spec, xc))
    Ktc = gram(spec, xt, xc)
    A = solve_triangular(L, Ktc.T, lower=True)
    mean = A.T @ solve_triangular(L, yc, lower=True)
    cov = Ktt - A.T @ A
    cov = 0.5 * (cov + cov.T)
    return GpPosterior(xt, mean, cov)


def full_loglik(post, y):
    """Joint Gaussian log-density of ``y`` under ``post``, per target point."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != post.mean.shape:
        raise ValueError(f"y has {y.size} entries, posterior has {post.mean.size}")
    n = y.size
    try:
        L, _ = jittered_cholesky(post.cov, jitter=0.0 if _is_pd(post.cov) else JITTER)
    except CholeskyError as e:
        raise CholeskyError(f"posterior covariance is singular: {e}") from None
    r = solve_triangular(L, y - post.mean, lower=True)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (r @ r + logdet + n * LOG_2PI) / n)


def _is_pd(C):
    try:
        np.linalg.cholesky(C)
        return True
    except np.linalg.LinAlgError:
        return False


def diag_loglik(post, y):
    """Sum of marginal Gaussian log-densities (correlations dropped), per target point."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != post.mean.shape:
        raise ValueError(f"y has {y.size} entries, posterior has {post.mean.size}")
    var = np.maximum(post.var, 0.0)
    if np.any(var <= 0.0):
        i = int(np.argmin(var))
        raise ValueError(f"non-positive posterior variance at target {i}")
    r = y - post.mean
    return float(np.mean(-0.5 * (LOG_2PI + np.log(var) + r * r / var)))


def sample_posterior(post, n, rng):
    """``n`` joint draws, shape (n, n_targets)."""
    m = post.mean.size
    if m == 0:
        return np.zeros((n, 0))
    if not np.any(post.cov):
        return np.tile(post.mean, (n, 1))
    L, _ = jittered_cholesky(post.cov, jitter=0.0 if _is_pd(post.cov) else JITTER)
    eps = rng.standard_normal((n, m))
    return post.mean + eps @ L.T


def dense_posterior(spec, xc, yc, xt):
    """Reference conditioning with an explicit inverse of the context Gram matrix."""
    xc = np.asarray(xc, dtype=np.float64).reshape(-1)
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    Ktt = gram(spec, xt) + JITTER * np.eye(xt.size)
    if xc.size == 0:
        return GpPosterior(xt, np.zeros(xt.size), Ktt)
    Kcc_inv = np.linalg.inv(gram(spec, xc) + JITTER * np.eye(xc.size))
    Ktc = gram(spec, xt, xc)
    mean = Ktc @ (Kcc_inv @ np.asarray(yc, dtype=np.float64))
    cov = Ktt - Ktc @ Kcc_inv @ Ktc.T
    return GpPosterior(xt, mean, 0.5 * (cov + cov.T))


def chol_solve(L, b):
    return cho_solve((L, True), b)
