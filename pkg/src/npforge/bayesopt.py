"""Sequential maximisation of a synthetic field with Thompson sampling, UCB or random queries."""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gp_oracle
from .checkpoint import Checkpoint
from .convdeepset import MARGIN, make_discretization
from .models import convcnp_forward, convnp_encode, convnp_sample
from .synthproc import ProcessSpec, sample_function

GRID_SIZE = 64
GRID_RANGE = (-2.0, 2.0)
UCB_BETA = 2.0
UCB_DRAWS = 64
METHODS = ("TS", "UCB", "random")


@dataclass
class Field:
    grid: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.grid.shape != self.y.shape or self.grid.ndim != 1:
            raise ValueError("grid and values must be 1D and equally long")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("field values must be finite")


def make_field(process, rng, n=GRID_SIZE, lo=GRID_RANGE[0], hi=GRID_RANGE[1]):
    if isinstance(process, str):
        process = ProcessSpec.from_tag(process)
    grid = np.linspace(lo, hi, n)
    return Field(grid, sample_function(process, grid, rng))


@dataclass
class RegretCurve:
    r: np.ndarray  # instantaneous regret r_t, t = 1..T
    rbar: np.ndarray  # running mean of r
    seed: object = None
    queries: np.ndarray = None


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


class GpPredictor:
    coherent = True

    def __init__(self, kernel):
        self.kernel = kernel

    def _post(self, xc, yc, grid):
        return gp_oracle.posterior(self.kernel, xc, yc, grid)

    def sample(self, xc, yc, grid, rng):
        return gp_oracle.sample_posterior(self._post(xc, yc, grid), 1, rng)[0]

    def moments(self, xc, yc, grid, rng=None):
        post = self._post(xc, yc, grid)
        return post.mean, np.sqrt(np.maximum(post.var, 0.0))


class ConvNPPredictor:
    """Coherent samples are decoded means under one latent draw."""

    coherent = True

    def __init__(self, model, draws=UCB_DRAWS):
        self.model = model.to_model() if isinstance(model, Checkpoint) else model
        self.draws = draws

    def _encode(self, xc, yc, grid):
        disc = make_discretization(np.concatenate([np.ravel(xc), grid]), self.model.hyper["density"], MARGIN)
        return convnp_encode(self.model, xc, yc, disc)

    def sample(self, xc, yc, grid, rng):
        return convnp_sample(self.model, self._encode(xc, yc, grid), grid, 1, rng).mu[0]

    def moments(self, xc, yc, grid, rng=None):
        rng = rng or np.random.default_rng(0)
        return convnp_sample(self.model, self._encode(xc, yc, grid), grid, self.draws, rng).mixture_moments()


class ConvCNPPredictor:
    coherent = False

    def __init__(self, model):
        self.model = model.to_model() if isinstance(model, Checkpoint) else model

    def sample(self, xc, yc, grid, rng):
        raise ValueError("a factorised predictive cannot produce coherent function samples; use UCB")

    def moments(self, xc, yc, grid, rng=None):
        with ad.no_grad():
            return convcnp_forward(self.model, xc, yc, grid)


def make_predictor(kind, process=None, checkpoint=None):
    if kind == "gp":
        if isinstance(process, str):
            process = ProcessSpec.from_tag(process)
        if process is None or not process.is_gp:
            raise ValueError("GP predictor needs a kernel-backed process")
        return GpPredictor(process.kernel)
    if kind == "convnp":
        return ConvNPPredictor(checkpoint)
    if kind == "convcnp":
        return ConvCNPPredictor(checkpoint)
    raise ValueError(f"unknown predictor kind {kind!r}")


# ---------------------------------------------------------------------------
# acquisition
# ---------------------------------------------------------------------------


def thompson_acquire(predictor, xc, yc, grid, rng):
    """Index of the maximiser of one coherent posterior sample over ``grid``."""
    if not getattr(predictor, "coherent", False):
        raise ValueError("Thompson sampling needs a predictor with coherent function samples")
    return int(np.argmax(predictor.sample(xc, yc, grid, rng)))


def ucb_acquire(predictor, xc, yc, grid, beta=UCB_BETA, rng=None):
    """Index of the maximiser of mu + beta * sigma; ties go to the lowest index."""
    mu, sd = predictor.moments(xc, yc, grid, rng)
    return int(np.argmax(mu + beta * sd))


def running_mean(r):
    r = np.asarray(r, dtype=np.float64)
    return np.cumsum(r) / np.arange(1, r.size + 1)


def run_episode(predictor, field, method, iters, rng, beta=UCB_BETA):
    """Start from an empty context, query ``iters`` times, and record regret."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    grid, y = field.grid, field.y
    best = float(y.max())
    picked = []
    r = np.empty(iters)
    for t in range(iters):
        xc, yc = grid[picked], y[picked]
        if method == "random":
            i = int(rng.integers(grid.size))
        elif method == "TS":
            i = thompson_acquire(predictor, xc, yc, grid, rng)
        else:
            i = ucb_acquire(predictor, xc, yc, grid, beta, rng)
        picked.append(i)
        r[t] = best - float(y[picked].max())
    return RegretCurve(r, running_mean(r), queries=np.array(picked))


def average_regret(curves):
    """Pointwise mean running regret and its standard error across episodes."""
    curves = list(curves)
    if not curves:
        raise ValueError("no curves")
    T = curves[0].rbar.size
    if any(c.rbar.size != T for c in curves):
        raise ValueError("regret curves have different lengths")
    R = np.stack([c.rbar for c in curves])
    mean = np.sort(R, axis=0).mean(axis=0)  # sorted so the result ignores episode order
    if len(curves) == 1:
        return mean, np.zeros(T)
    return mean, R.std(axis=0, ddof=1) / np.sqrt(len(curves))


def run_experiment(predictor, process, n_fields, iters, methods=METHODS, seed=0, beta=UCB_BETA):
    """Curves per method over ``n_fields`` independent fields (field i uses stream [seed, i])."""
    out = {m: [] for m in methods}
    for e in range(n_fields):
        field = make_field(process, np.random.default_rng([seed, e]))
        for k, m in enumerate(methods):
            curve = run_episode(predictor, field, m, iters, np.random.default_rng([seed, e, k + 1]), beta)
            curve.seed = (seed, e)
            out[m].append(curve)
    return out


def write_regret_csv(path, results):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "episode", "t", "r_t", "rbar_t"])
        for m, curves in results.items():
            for e, c in enumerate(curves):
                for t in range(c.r.size):
                    w.writerow([m, e, t + 1, repr(float(c.r[t])), repr(float(c.rbar[t]))])
