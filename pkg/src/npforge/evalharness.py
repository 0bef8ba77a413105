"""Held-out evaluation protocols, per-point log-likelihood summaries, and the shift test."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gp_oracle
from .batching import from_arrays
from .checkpoint import Checkpoint
from .convdeepset import MARGIN, make_discretization
from .models import Model, convcnp_forward, draw_noise, latent_predict, sample_latents
from .objectives import convcnp_loglik, lml_task, liw_estimate
from .synthproc import ProcessSpec, TaskProtocol, sample_tasks

EVAL_CONTEXT_SIZES = (0, 10)
EVAL_TARGET_SIZE = 50
DESK_L = 512
DESK_TASKS = 1024
GP_PREDICTORS = ("gp-full", "gp-diag")

_REGIMES = {
    "within": (((-2.0, 2.0),), ((-2.0, 2.0),)),
    "beyond": (((2.0, 6.0),), ((2.0, 6.0),)),
    "extrap": (((-2.0, 2.0),), ((-4.0, -2.0), (2.0, 4.0))),
}

CSV_COLUMNS = ("model", "objective", "process", "regime", "mean", "stderr", "n_tasks", "L", "seed")


def regime_protocol(name):
    if name not in _REGIMES:
        raise ValueError(f"unknown regime {name!r}; expected one of {', '.join(_REGIMES)}")
    ctx, tgt = _REGIMES[name]
    return TaskProtocol(ctx, tgt, EVAL_CONTEXT_SIZES, EVAL_TARGET_SIZE, name)


@dataclass
class EvalSummary:
    model: str
    process: str
    regime: str
    mean: float
    stderr: float
    n_tasks: int
    L: int
    objective: str = ""
    seed: int = 0
    values: np.ndarray = field(default=None, repr=False)  # per-task per-point log-likelihoods

    def row(self):
        return [self.model, self.objective, self.process, self.regime, repr(self.mean), repr(self.stderr), self.n_tasks, self.L, self.seed]


def summarize(values):
    """Compensated mean and standard error (sample std / sqrt(n))."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n == 0:
        raise ValueError("no values to summarise")
    mean = math.fsum(v) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _resolve(predictor, model):
    """-> (label, callable(task, index) -> per-point log-likelihood, L used?, objective label)."""
    if isinstance(predictor, Checkpoint):
        model = predictor.to_model()
        predictor = model
    if isinstance(predictor, Model):
        model, predictor = predictor, None
    if predictor in GP_PREDICTORS:
        return predictor, None
    if predictor == "convcnp-exact" or predictor is None:
        if model is None:
            raise ValueError("a model or checkpoint is required for this predictor")
        if predictor == "convcnp-exact" and model.tag != "convcnp":
            raise ValueError("convcnp-exact needs a ConvCNP model")
        return model.tag, model
    raise ValueError(f"unknown predictor {predictor!r}")


def evaluate(predictor, protocol, process, n_tasks=DESK_TASKS, L=DESK_L, seed=0, model=None, objective=None, chunk=128):
    """Mean per-point log-likelihood over ``n_tasks`` held-out tasks.

    ``predictor`` is "gp-full", "gp-diag", "convcnp-exact" (with ``model``),
    or a model / checkpoint. Latent models are scored with the ML estimate
    unless ``objective`` (default: the checkpoint's training objective) is
    "NP", in which case the importance-weighted estimate is used.
    """
    if isinstance(process, str):
        process = ProcessSpec.from_tag(process)
    if isinstance(protocol, str):
        protocol = regime_protocol(protocol)
    if objective is None and isinstance(predictor, Checkpoint):
        objective = predictor.meta.get("objective")
    label, net = _resolve(predictor, model)
    if net is None and not process.is_gp:
        raise ValueError(f"GP predictor invalid for {process.tag}")
    tasks = sample_tasks(protocol, process, n_tasks, seed)
    values = np.empty(n_tasks)
    used_L = 0
    obj_label = "exact"
    for i, task in enumerate(tasks):
        if net is None:
            post = gp_oracle.posterior(process.kernel, task.xc, task.yc, task.xt)
            values[i] = (gp_oracle.full_loglik if label == "gp-full" else gp_oracle.diag_loglik)(post, task.yt)
        elif not net.latent:
            with ad.no_grad():
                values[i] = float(convcnp_loglik(net, from_arrays(task.xc, task.yc, task.xt, task.yt)).data[0]) / task.n_target
        else:
            used_L = L
            rng = np.random.default_rng([seed, i, 1])
            if (objective or "ML").upper() == "NP":
                obj_label = "IW"
                values[i] = liw_estimate(net, task, L, rng, chunk) / task.n_target
            else:
                obj_label = "ML"
                values[i] = lml_task(net, task, L, rng, chunk) / task.n_target
    mean, se = summarize(values)
    return EvalSummary(label, process.tag, protocol.regime, mean, se, n_tasks, used_L, obj_label, seed, values)


def write_summaries(path, summaries):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in summaries:
            w.writerow(s.row())


# ---------------------------------------------------------------------------
# translation equivariance
# ---------------------------------------------------------------------------


def _conv_outputs(model, task, disc, xt, eps):
    """Per-target mean outputs: (1, M) for ConvCNP, (L, M) decoded means for ConvNP."""
    b = from_arrays(task.xc, task.yc, xt)
    with ad.no_grad():
        if not model.latent:
            mu, _ = model.predict(b, disc)
            return mu.data
        if model.tag == "np":
            mu_z, sigma_z = model.encode(b.xc, b.yc, b.mc)
        else:
            mu_z, sigma_z = model.encode(b.xc, b.yc, b.mc, disc)
        z = sample_latents(mu_z, sigma_z, eps)
        mu, _ = model.decode(z, b.xt, disc)
    return mu.data[0]


def te_shift_test(model, task, m, L=4, seed=0, strict=True):
    """Max |prediction(task) - prediction(task shifted by m grid spacings)| on interior targets.

    Latent draws are matched between the two runs. Interior targets lie at
    least half a receptive field inside both ends of the grid. ``strict=False``
    lets the NP baseline through (shifting by the same physical distance) so
    its lack of equivariance can be measured.
    """
    if isinstance(model, Checkpoint):
        model = model.to_model()
    conv = model.tag in ("convcnp", "convnp")
    if strict and not conv:
        raise ValueError(f"{model.tag} is not a convolutional model; the shift test needs a grid")
    density = model.hyper["density"]
    disc = make_discretization(np.concatenate([task.xc, task.xt]), density, MARGIN)
    delta = m * disc.spacing
    if conv:
        half = 0.5 * model.cnn_spec.receptive_field(density)
        keep = (task.xt - disc.start >= half) & (disc.stop - task.xt >= half)
    else:
        keep = np.ones(task.n_target, dtype=bool)
    if not keep.any():
        raise ValueError("no target lies far enough inside the grid; widen the task")
    eps = None
    if model.latent:
        zshape = (model.hyper["latent_dim"],) if model.tag == "np" else (disc.count, model.hyper["latent_channels"])
        eps = draw_noise(np.random.default_rng(seed), 1, L, zshape)
    a = _conv_outputs(model, task, disc, task.xt, eps)
    b = _conv_outputs(model, task.shifted(delta), disc.shifted(m), task.xt + delta, eps)
    return float(np.max(np.abs(a - b)[..., keep]))


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def predictive_strip(predictor, task, grid, n_samples=3, L=64, rng=None, process=None):
    """Mean, std and sample paths over ``grid`` for one task, as plain lists."""
    rng = rng or np.random.default_rng(0)
    grid = np.asarray(grid, dtype=np.float64)
    out = {"x": grid.tolist(), "context_x": task.xc.tolist(), "context_y": task.yc.tolist()}
    if predictor in GP_PREDICTORS:
        post = gp_oracle.posterior(process.kernel, task.xc, task.yc, grid)
        mu, sd = post.mean, np.sqrt(np.maximum(post.var, 0.0))
        paths = gp_oracle.sample_posterior(post, n_samples, rng)
    else:
        model = predictor.to_model() if isinstance(predictor, Checkpoint) else predictor
        if model.latent:
            mix = latent_predict(model, task.xc, task.yc, grid, max(L, n_samples), rng)
            mu, sd = mix.mixture_moments()
            paths = mix.mu[:n_samples]
        else:
            mu, sd = convcnp_forward(model, task.xc, task.yc, grid)
            paths = np.empty((0, grid.size))  # factorised predictive: no coherent samples
    out.update(mu=np.asarray(mu).tolist(), sigma=np.asarray(sd).tolist(), samples=np.asarray(paths).tolist())
    return out


def write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
