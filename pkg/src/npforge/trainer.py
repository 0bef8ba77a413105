"""Meta-training: Adam on freshly sampled task batches, with a noise warm-up for latent models.

Every batch is drawn from its own generator seeded by ``(seed, epoch, batch)``,
so a run is a pure function of its configuration and can be resumed or
replayed batch by batch.
"""

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .batching import collate
from .checkpoint import Checkpoint, save_checkpoint
from .models import build_model
from .objectives import ObjectiveConfig, batch_objective, default_objective
from .synthproc import ProcessSpec, sample_task, train_protocol

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericError(FloatingPointError):
    """A non-finite loss or gradient."""


class TrainingDiverged(NumericError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    tasks_per_epoch: int = 2 ** 14
    batch_size: int = 16
    lr: float = 5e-3
    objective: ObjectiveConfig = field(default_factory=lambda: default_objective("ML"))
    sigma_freeze_epochs: int = 20
    sigma_freeze_value: float = 1e-2
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        for name in ("tasks_per_epoch", "batch_size", "lr", "sigma_freeze_value", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_freeze_epochs < 0:
            raise ValueError("sigma_freeze_epochs must be non-negative")
        if self.epochs and self.sigma_freeze_epochs > self.epochs:
            raise ValueError("sigma_freeze_epochs cannot exceed epochs")

    @classmethod
    def desk(cls, **overrides):
        """Reduced budget: 10 epochs of 2^12 tasks, noise frozen for the first 2."""
        base = dict(epochs=10, tasks_per_epoch=2 ** 12, sigma_freeze_epochs=2)
        base.update(overrides)
        return cls(**base)

    @property
    def batches_per_epoch(self):
        return math.ceil(self.tasks_per_epoch / self.batch_size)

    def with_objective(self, kind, L=None):
        obj = default_objective(kind)
        if L is not None:
            obj = ObjectiveConfig(obj.kind, L, obj.append_context)
        return replace(self, objective=obj)


@dataclass
class AdamState:
    m: dict
    v: dict
    counts: dict  # per-parameter update counts, for bias correction
    step: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: 0 for k in params},
        )


def global_norm(grads):
    return math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads.values()))


def clip_grads(grads, clip_norm):
    """Scale ``grads`` so their global norm is at most ``clip_norm``; returns (clipped, pre-clip norm)."""
    norm = global_norm(grads)
    if clip_norm is None or norm <= clip_norm:
        return dict(grads), norm
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params, grads, state, lr, clip_norm=None):
    """One bias-corrected Adam update after global-norm clipping.

    ``params`` maps names to Values, ``grads`` maps (a subset of) the same
    names to arrays; names absent from ``grads`` are left untouched. Returns
    the pre-clip global norm.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != params[k].data.shape:
            raise ad.ShapeError("adam_step", g.shape, params[k].data.shape, detail=k)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {k!r}")
    clipped, norm = clip_grads(grads, clip_norm)
    state.step += 1
    for k in sorted(clipped):
        g = clipped[k]
        m = state.m[k] = BETA1 * state.m[k] + (1.0 - BETA1) * g
        v = state.v[k] = BETA2 * state.v[k] + (1.0 - BETA2) * g * g
        state.counts[k] += 1
        t = state.counts[k]
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        params[k].data = params[k].data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return norm


def batch_rng(seed, epoch, index):
    return np.random.default_rng([seed, epoch, index])


def sample_batch(protocol, process, size, rng):
    return collate(sample_task(protocol, process, rng) for _ in range(size))


@dataclass
class EpochRecord:
    epoch: int
    objective: float  # mean per-target-point objective over the epoch
    grad_norm: float  # mean pre-clip global gradient norm
    wall_time: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    model: object = None


def _meta(config, process, epoch):
    return {
        "epoch": epoch,
        "objective": config.objective.kind,
        "L": config.objective.L,
        "process": process.tag,
        "seed": config.seed,
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def train(config, model_kind, process, out_dir=None, hyper=None, protocol=None, log=None):
    """Train a fresh model; returns the final checkpoint and per-epoch history.

    With ``out_dir`` set, writes ``epoch_XXX.ckpt`` after every epoch (epoch 0
    is the initialisation), ``final.ckpt``, ``metrics.csv`` (epoch, objective,
    grad_norm) and ``timing.csv`` (epoch, wall_time). Wall time lives in its
    own file so that the metrics are byte-reproducible.
    """
    if isinstance(process, str):
        process = ProcessSpec.from_tag(process)
    protocol = protocol or train_protocol()
    model = build_model(model_kind, hyper, seed=config.seed, process=process.tag)
    params = model.params
    state = AdamState.zeros(params)
    frozen_names = set(model.noise_head_names()) if model.latent else set()
    history = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    last_good = _save(model, config, process, out_dir, 0)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        freeze = model.latent and epoch <= config.sigma_freeze_epochs
        model.noise_fixed = config.sigma_freeze_value if freeze else None
        obj_sum, pts, norms = [], [], []
        for b in range(config.batches_per_epoch):
            rng = batch_rng(config.seed, epoch, b)
            n = min(config.batch_size, config.tasks_per_epoch - b * config.batch_size)
            batch = sample_batch(protocol, process, n, rng)
            model.zero_grad()
            per_task = batch_objective(model, batch, config.objective, rng)
            loss = -per_task.sum()
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", last_good)
            ad.backward(loss)
            grads = {
                k: p.grad
                for k, p in params.items()
                if p.grad is not None and not (freeze and k in frozen_names)
            }
            try:
                norms.append(adam_step(params, grads, state, config.lr, config.clip_norm))
            except NumericError as e:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {e}", last_good) from None
            obj_sum.append(float(per_task.data.sum()))
            pts.append(float(batch.mt.sum()))
        rec = EpochRecord(epoch, math.fsum(obj_sum) / math.fsum(pts), math.fsum(norms) / len(norms), time.perf_counter() - t0)
        history.append(rec)
        model.noise_fixed = None
        last_good = _save(model, config, process, out_dir, epoch)
        if out_dir is not None:
            _write_metrics(out_dir, history)
        if log is not None:
            log(rec)

    model.noise_fixed = None
    final = Checkpoint.from_model(model, **_meta(config, process, config.epochs))
    if out_dir is not None:
        save_checkpoint(final, os.path.join(out_dir, "final.ckpt"))
        _write_metrics(out_dir, history)
    return TrainResult(final, history, model)


def _save(model, config, process, out_dir, epoch):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt")
    save_checkpoint(Checkpoint.from_model(model, **_meta(config, process, epoch)), path)
    return path


def _write_metrics(out_dir, history):
    _write_csv(
        os.path.join(out_dir, "metrics.csv"),
        ["epoch", "objective", "grad_norm"],
        [[r.epoch, repr(r.objective), repr(r.grad_norm)] for r in history],
    )
    _write_csv(
        os.path.join(out_dir, "timing.csv"),
        ["epoch", "wall_time"],
        [[r.epoch, f"{r.wall_time:.3f}"] for r in history],
    )
