"""Training and evaluation objectives.

* ML  -- log-mean-exp over L latent draws from the context encoder.
* NP  -- reconstruction under the target-conditioned encoder minus the KL to
  the context-conditioned encoder.
* IW  -- importance-weighted estimate using the target-conditioned encoder as
  proposal (evaluation only).

The NP objective equals the ML objective minus a KL term between the
target-conditioned encoder and the (normalised) tilted context encoder, so a
loose NP bound reflects a poor proposal rather than a worse predictive.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .batching import from_arrays
from .models import draw_noise, sample_latents

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "ML"
    L: int = 20
    append_context: bool = True

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in ("ML", "NP", "IW"):
            raise ValueError(f"unknown objective {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if kind == "ML" and self.L < 2:
            warnings.warn("single-sample ML training drives the latent towards a deterministic one", stacklevel=2)


def default_objective(kind):
    return ObjectiveConfig(kind, 20 if kind.upper() == "ML" else 5)


# ---------------------------------------------------------------------------
# numpy building blocks
# ---------------------------------------------------------------------------


def gaussian_loglik(y, mu, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (np.asarray(y, dtype=np.float64) - mu) / sigma
    out = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    return float(out) if np.ndim(out) == 0 else out


def lml_estimate(totals, axis=-1):
    """log mean exp of per-sample totals, max-shifted."""
    t = np.asarray(totals, dtype=np.float64)
    L = t.shape[axis]
    m = np.max(t, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(t - m).sum(axis=axis)) + np.squeeze(m, axis=axis) - math.log(L)
    return float(out) if np.ndim(out) == 0 else out


def kl_diag_gaussians(q_mu, q_sigma, p_mu, p_sigma):
    q_mu, q_sigma, p_mu, p_sigma = (np.asarray(a, dtype=np.float64) for a in (q_mu, q_sigma, p_mu, p_sigma))
    if q_mu.shape != p_mu.shape or q_sigma.shape != p_sigma.shape:
        raise ValueError("dimension mismatch")
    if np.any(q_sigma <= 0) or np.any(p_sigma <= 0):
        raise ValueError("standard deviations must be positive")
    d = q_mu - p_mu
    return float(np.sum(np.log(p_sigma / q_sigma) + (q_sigma ** 2 + d * d) / (2.0 * p_sigma ** 2) - 0.5))


# ---------------------------------------------------------------------------
# graph builders (batch level)
# ---------------------------------------------------------------------------


def kl_diag(q_mu, q_sigma, p_mu, p_sigma):
    """Per-batch-element KL(q || p) summed over every non-batch axis; (B,) Value."""
    ratio = ad.log(p_sigma) - ad.log(q_sigma)
    d = q_mu - p_mu
    terms = ratio + (ad.square(q_sigma) + ad.square(d)) / (2.0 * ad.square(p_sigma)) - 0.5
    return terms.sum(axis=tuple(range(1, q_mu.ndim)))


def gaussian_logdensity_sum(z, mu, sigma):
    """sum over latent axes of log N(z; mu, sigma); z is (B, L, *Z), mu/sigma (B, *Z)."""
    B = mu.shape[0]
    zshape = mu.shape[1:]
    lp = ad.gaussian_logpdf(z, mu.reshape((B, 1) + zshape), sigma.reshape((B, 1) + zshape))
    return lp.sum(axis=tuple(range(2, z.ndim)))


def target_totals(mu, sigma, yt, mt):
    """sum_m mask * log N(y_m; mu, sigma) for (B, L, M) predictions -> (B, L)."""
    lp = ad.gaussian_logpdf(np.asarray(yt)[:, None, :], mu, sigma)
    return (lp * np.asarray(mt)[:, None, :]).sum(axis=2)


def convcnp_loglik(model, batch, disc=None):
    """Exact factorised log-likelihood per task, (B,)."""
    mu, sigma = model.predict(batch, disc)
    lp = ad.gaussian_logpdf(batch.yt, mu, sigma)
    return (lp * batch.mt).sum(axis=1)


def _latent_draws(model, xc, yc, mc, xt, disc, L, rng):
    mu_z, sigma_z = model.encode(xc, yc, mc, disc)
    eps = draw_noise(rng, xc.shape[0], L, mu_z.shape[1:])
    z = sample_latents(mu_z, sigma_z, eps)
    return mu_z, sigma_z, z


def ml_objective(model, batch, L, rng, disc=None):
    """Monte-Carlo log-likelihood bound per task, (B,)."""
    disc = disc or model.discretize(batch)
    _, _, z = _latent_draws(model, batch.xc, batch.yc, batch.mc, batch.xt, disc, L, rng)
    mu, sigma = model.decode(z, batch.xt, disc)
    return ad.logsumexp(target_totals(mu, sigma, batch.yt, batch.mt), axis=1) - math.log(L)


def np_objective(model, batch, L, rng, append_context=True, disc=None):
    """Expected reconstruction under q(z | D_c u D_t) minus KL to q(z | D_c), per task."""
    disc = disc or model.discretize(batch)
    tgt = batch.with_context_as_target() if append_context else batch
    xu, yu, mu_mask = batch.union_as_context()
    q_mu, q_sigma, z = _latent_draws(model, xu, yu, mu_mask, tgt.xt, disc, L, rng)
    p_mu, p_sigma = model.encode(batch.xc, batch.yc, batch.mc, disc)
    mu, sigma = model.decode(z, tgt.xt, disc)
    rec = target_totals(mu, sigma, tgt.yt, tgt.mt).mean(axis=1)
    return rec - kl_diag(q_mu, q_sigma, p_mu, p_sigma)


def iw_objective(model, batch, L, rng, disc=None):
    """Importance-weighted bound with the target-conditioned encoder as proposal, per task."""
    disc = disc or model.discretize(batch)
    xu, yu, mu_mask = batch.union_as_context()
    q_mu, q_sigma, z = _latent_draws(model, xu, yu, mu_mask, batch.xt, disc, L, rng)
    p_mu, p_sigma = model.encode(batch.xc, batch.yc, batch.mc, disc)
    log_w = gaussian_logdensity_sum(z, p_mu, p_sigma) - gaussian_logdensity_sum(z, q_mu, q_sigma)
    mu, sigma = model.decode(z, batch.xt, disc)
    return ad.logsumexp(target_totals(mu, sigma, batch.yt, batch.mt) + log_w, axis=1) - math.log(L)


def batch_objective(model, batch, cfg, rng):
    """Per-task objective Values for a training batch."""
    if not model.latent:
        return convcnp_loglik(model, batch)
    if cfg.kind == "ML":
        return ml_objective(model, batch, cfg.L, rng)
    if cfg.kind == "NP":
        return np_objective(model, batch, cfg.L, rng, cfg.append_context)
    return iw_objective(model, batch, cfg.L, rng)


# ---------------------------------------------------------------------------
# evaluation-time estimators (no graph kept, sample axis chunked)
# ---------------------------------------------------------------------------


def sample_totals(model, batch, L, rng, proposal="context", chunk=128, disc=None):
    """Per-sample log-likelihood totals (B, L), plus log-weights when proposal="union"."""
    disc = disc or model.discretize(batch)
    with ad.no_grad():
        p_mu, p_sigma = model.encode(batch.xc, batch.yc, batch.mc, disc)
        if proposal == "union":
            q_mu, q_sigma = model.encode(*batch.union_as_context(), disc)
        else:
            q_mu, q_sigma = p_mu, p_sigma
        out = []
        done = 0
        while done < L:
            n = min(chunk, L - done)
            z = sample_latents(q_mu, q_sigma, draw_noise(rng, batch.size, n, q_mu.shape[1:]))
            mu, sigma = model.decode(z, batch.xt, disc)
            tot = target_totals(mu, sigma, batch.yt, batch.mt).data
            if proposal == "union":
                tot = tot + (gaussian_logdensity_sum(z, p_mu, p_sigma) - gaussian_logdensity_sum(z, q_mu, q_sigma)).data
            out.append(tot)
            done += n
    return np.concatenate(out, axis=1)


def _one(task):
    return from_arrays(task.xc, task.yc, task.xt, task.yt)


def lml_task(model, task, L, rng, chunk=128):
    return lml_estimate(sample_totals(model, _one(task), L, rng, "context", chunk)[0])


def liw_estimate(model, task, L, rng, chunk=128):
    return lml_estimate(sample_totals(model, _one(task), L, rng, "union", chunk)[0])


def lnp_objective(model, task, L, rng, append_context=True):
    with ad.no_grad():
        return float(np_objective(model, _one(task), L, rng, append_context).data[0])
