"""Command-line entry point: ``npforge <subcommand> [flags]``.

Configuration is resolved in three layers: built-in defaults (full scale, or
desk scale with ``--desk-scale``), then a JSON file given by ``--config``, then
explicit flags. The resolved configuration is written to ``<out>/config.json``
and every artefact of the run goes under ``--out``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O failure.
"""

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint
from .synthproc import PROCESS_TAGS, ProcessSpec, canonical_tag

EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

COMMANDS = ("generate", "train", "eval", "bayesopt", "gradcheck", "sample")
PREDICTORS = ("checkpoint", "gp-full", "gp-diag", "convcnp-exact")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "train"
    process: str = "matern52"
    model: str = "convcnp"
    objective: str = "ml"
    L: int = 0  # 0 resolves to the objective's default (ML 20, NP 5)
    epochs: int = 100
    tasks_per_epoch: int = 2 ** 14
    batch_size: int = 16
    lr: float = 5e-3
    sigma_freeze_epochs: int = 20
    sigma_freeze_value: float = 1e-2
    clip_norm: float = 1.0
    regime: str = "within"
    predictor: str = "checkpoint"
    n_tasks: int = 4096
    eval_L: int = 5000
    plot_tasks: int = 4
    bo_method: str = "all"
    bo_predictor: str = "gp"
    bo_fields: int = 200
    bo_iters: int = 50
    beta: float = 2.0
    ucb_draws: int = 64
    n_samples: int = 3
    checkpoint: str = ""
    out: str = ""
    seed: int = 0
    desk_scale: bool = False


DESK_DEFAULTS = {
    "epochs": 10,
    "tasks_per_epoch": 2 ** 12,
    "sigma_freeze_epochs": 2,
    "n_tasks": 1024,
    "eval_L": 512,
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, value):
    """Type-check a file value against the RunConfig field type."""
    want = type(_FIELDS[key].default)
    if want is bool:
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r}: expected true/false, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config key {key!r}: expected an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"config key {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise UsageError(f"config key {key!r}: expected a string, got {value!r}")
    return value


def _parser():
    p = argparse.ArgumentParser(prog="npforge", description="Convolutional neural processes for 1D regression.")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS
    for name in COMMANDS:
        sp = sub.add_parser(name, argument_default=S)
        sp.add_argument("--config", help="JSON file with RunConfig keys")
        sp.add_argument("--out", help="output directory (required)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--desk-scale", dest="desk_scale", action="store_true")
        sp.add_argument("--process", choices=PROCESS_TAGS)
        if name in ("train", "eval", "sample"):
            sp.add_argument("--model", choices=("convcnp", "convnp", "np"))
        if name in ("train", "eval"):
            sp.add_argument("--objective", choices=("ml", "np", "ML", "NP"))
            sp.add_argument("--L", "-L", dest="L", type=int)
        if name == "train":
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--tasks-per-epoch", dest="tasks_per_epoch", type=int)
            sp.add_argument("--batch-size", dest="batch_size", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--sigma-freeze-epochs", dest="sigma_freeze_epochs", type=int)
            sp.add_argument("--sigma-freeze-value", dest="sigma_freeze_value", type=float)
            sp.add_argument("--clip-norm", dest="clip_norm", type=float)
        if name in ("generate", "eval", "sample"):
            sp.add_argument("--regime", choices=("within", "beyond", "extrap"))
            if name != "sample":
                sp.add_argument("--n-tasks", dest="n_tasks", type=int)
        if name == "eval":
            sp.add_argument("--predictor", choices=PREDICTORS)
            sp.add_argument("--eval-L", dest="eval_L", type=int)
        if name in ("eval", "sample", "bayesopt"):
            sp.add_argument("--checkpoint")
        if name in ("eval", "sample"):
            sp.add_argument("--plot-tasks", dest="plot_tasks", type=int)
            sp.add_argument("--n-samples", dest="n_samples", type=int)
        if name == "bayesopt":
            sp.add_argument("--method", dest="bo_method", choices=("TS", "UCB", "random", "all"))
            sp.add_argument("--predictor", dest="bo_predictor", choices=("gp", "convnp", "convcnp"))
            sp.add_argument("--fields", dest="bo_fields", type=int)
            sp.add_argument("--iters", dest="bo_iters", type=int)
            sp.add_argument("--beta", type=float)
            sp.add_argument("--ucb-draws", dest="ucb_draws", type=int)
    return p


def parse_config(argv):
    """Resolve defaults < config file < flags into a validated RunConfig."""
    try:
        ns = vars(_parser().parse_args(argv))
    except SystemExit as e:
        if e.code == 0:
            raise
        raise UsageError("invalid command line") from None
    file_vals = {}
    if "config" in ns:
        path = ns.pop("config")
        try:
            with open(path) as f:
                file_vals = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path}: {e}") from None
        if not isinstance(file_vals, dict):
            raise UsageError("config file must hold a JSON object")
        for k in file_vals:
            if k not in _FIELDS:
                raise UsageError(f"unknown config key {k!r}")
        file_vals = {k: _coerce(k, v) for k, v in file_vals.items()}
        file_vals.pop("command", None)
    desk = ns.get("desk_scale", file_vals.get("desk_scale", False))
    values = dataclasses.asdict(RunConfig())
    if desk:
        values.update(DESK_DEFAULTS)
    values.update(file_vals)
    values.update(ns)
    values["desk_scale"] = bool(desk)
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not cfg.out:
        raise UsageError("missing required path 'out' (--out)")
    try:
        cfg.process = canonical_tag(cfg.process)
    except ValueError as e:
        raise UsageError(str(e)) from None
    cfg.objective = cfg.objective.upper()
    if cfg.objective not in ("ML", "NP"):
        raise UsageError(f"objective must be ml or np, got {cfg.objective!r}")
    if cfg.L == 0:
        cfg.L = 20 if cfg.objective == "ML" else 5
    for k in ("epochs", "tasks_per_epoch", "batch_size", "n_tasks", "eval_L", "bo_fields", "bo_iters", "ucb_draws", "n_samples"):
        if getattr(cfg, k) < (0 if k == "epochs" else 1):
            raise UsageError(f"{k} must be positive")
    if cfg.plot_tasks < 0:
        raise UsageError("plot_tasks must be non-negative")
    gp = cfg.predictor in ("gp-full", "gp-diag") if cfg.command == "eval" else cfg.command == "bayesopt" and cfg.bo_predictor == "gp"
    if gp and not ProcessSpec.from_tag(cfg.process).is_gp:
        raise UsageError(f"GP predictor invalid for {cfg.process}")
    needs_ckpt = (cfg.command == "eval" and cfg.predictor in ("checkpoint", "convcnp-exact")) or cfg.command == "sample"
    needs_ckpt = needs_ckpt or (cfg.command == "bayesopt" and cfg.bo_predictor != "gp")
    if needs_ckpt and not cfg.checkpoint:
        raise UsageError("missing required path 'checkpoint' (--checkpoint)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _out(cfg, name):
    return os.path.join(cfg.out, name)


def _train_config(cfg):
    from .objectives import ObjectiveConfig, default_objective
    from .trainer import TrainConfig

    obj = ObjectiveConfig(cfg.objective, cfg.L or default_objective(cfg.objective).L)
    return TrainConfig(
        epochs=cfg.epochs,
        tasks_per_epoch=cfg.tasks_per_epoch,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        objective=obj,
        sigma_freeze_epochs=min(cfg.sigma_freeze_epochs, cfg.epochs),
        sigma_freeze_value=cfg.sigma_freeze_value,
        clip_norm=cfg.clip_norm,
        seed=cfg.seed,
    )


def cmd_generate(cfg):
    from .evalharness import regime_protocol
    from .synthproc import sample_tasks

    tasks = sample_tasks(regime_protocol(cfg.regime), ProcessSpec.from_tag(cfg.process), cfg.n_tasks, cfg.seed)
    with open(_out(cfg, "tasks.jsonl"), "w") as f:
        for t in tasks:
            f.write(t.to_json() + "\n")
    print(f"wrote {len(tasks)} tasks")


def cmd_train(cfg):
    from .trainer import train

    def log(r):
        print(f"epoch {r.epoch}: objective {r.objective:.4f}  grad-norm {r.grad_norm:.3g}  ({r.wall_time:.1f}s)", flush=True)

    result = train(_train_config(cfg), cfg.model, cfg.process, cfg.out, log=log)
    print(f"final checkpoint: {_out(cfg, 'final.ckpt')} ({len(result.history)} epochs)")


def cmd_eval(cfg):
    from .evalharness import predictive_strip, evaluate, regime_protocol, write_jsonl, write_summaries
    from .synthproc import sample_tasks

    proc = ProcessSpec.from_tag(cfg.process)
    protocol = regime_protocol(cfg.regime)
    pred = load_checkpoint(cfg.checkpoint) if cfg.predictor in ("checkpoint", "convcnp-exact") else cfg.predictor
    if cfg.predictor == "convcnp-exact" and pred.tag != "convcnp":
        raise UsageError("convcnp-exact needs a ConvCNP checkpoint")
    s = evaluate(pred, protocol, proc, cfg.n_tasks, cfg.eval_L, cfg.seed)
    write_summaries(_out(cfg, "results.csv"), [s])
    print(f"{s.model} {s.objective} {s.process}/{s.regime}: {s.mean:.4f} +- {s.stderr:.4f} ({s.n_tasks} tasks, L={s.L})")
    if cfg.plot_tasks:
        tasks = sample_tasks(protocol, proc, cfg.plot_tasks, cfg.seed)
        grid = _plot_grid(protocol)
        recs = [
            predictive_strip(pred, t, grid, cfg.n_samples, rng=np.random.default_rng([cfg.seed, i]), process=proc)
            for i, t in enumerate(tasks)
        ]
        write_jsonl(_out(cfg, "plots.jsonl"), recs)


def _plot_grid(protocol, n=256):
    lo = min(iv[0] for iv in protocol.context_ranges + protocol.target_ranges)
    hi = max(iv[1] for iv in protocol.context_ranges + protocol.target_ranges)
    return np.linspace(lo, hi, n)


def cmd_sample(cfg):
    from .evalharness import predictive_strip, regime_protocol, write_jsonl
    from .synthproc import sample_tasks

    proc = ProcessSpec.from_tag(cfg.process)
    protocol = regime_protocol(cfg.regime)
    ckpt = load_checkpoint(cfg.checkpoint)
    tasks = sample_tasks(protocol, proc, cfg.plot_tasks, cfg.seed)
    grid = _plot_grid(protocol)
    model = ckpt.to_model()
    recs = [
        predictive_strip(model, t, grid, cfg.n_samples, rng=np.random.default_rng([cfg.seed, i]))
        for i, t in enumerate(tasks)
    ]
    write_jsonl(_out(cfg, "samples.jsonl"), recs)
    print(f"wrote {len(recs)} predictive strips")


def cmd_bayesopt(cfg):
    from .bayesopt import METHODS, average_regret, make_predictor, run_experiment, write_regret_csv

    ckpt = load_checkpoint(cfg.checkpoint) if cfg.bo_predictor != "gp" else None
    pred = make_predictor(cfg.bo_predictor, cfg.process, ckpt)
    if hasattr(pred, "draws"):
        pred.draws = cfg.ucb_draws
    methods = METHODS if cfg.bo_method == "all" else (cfg.bo_method,)
    if not pred.coherent:
        methods = tuple(m for m in methods if m != "TS")
    res = run_experiment(pred, cfg.process, cfg.bo_fields, cfg.bo_iters, methods, cfg.seed, cfg.beta)
    write_regret_csv(_out(cfg, "regret.csv"), res)
    rows = []
    for m, curves in res.items():
        mean, se = average_regret(curves)
        rows.append([m, repr(float(mean[-1])), repr(float(se[-1]))])
        print(f"{m}: mean running regret at t={cfg.bo_iters}: {mean[-1]:.4f} +- {se[-1]:.4f}")
    with open(_out(cfg, "regret_summary.csv"), "w") as f:
        f.write("method,rbar_final,stderr\n")
        for r in rows:
            f.write(",".join(r) + "\n")


def model_gradcheck(kind, seed=0, process="matern52", n_coords=12, n_points=5, L=2):
    """Worst relative error of backward() against finite differences on one small task's loss.

    Latent models use ``L`` draws in the ML objective; the graph has the same
    structure for any L, so a small value keeps the check fast.
    """
    from .batching import collate
    from .models import build_model
    from .objectives import ObjectiveConfig, batch_objective
    from .synthproc import TaskProtocol, sample_task

    rng = np.random.default_rng([seed, 7])
    proto = TaskProtocol(context_sizes=(n_points, n_points), target_size=n_points)
    batch = collate([sample_task(proto, ProcessSpec.from_tag(process), rng)])
    model = build_model(kind, seed=seed, process=process)
    cfg = ObjectiveConfig("ML", L)

    def loss():
        return -batch_objective(model, batch, cfg, np.random.default_rng([seed, 11])).sum()

    return ad.grad_check_params(model.params, loss, n_coords=n_coords, rng=np.random.default_rng(seed))


def cmd_gradcheck(cfg):
    kinds = ("convcnp", "convnp", "np")
    worst_all = 0.0
    lines = []
    for k in kinds:
        err, name = model_gradcheck(k, cfg.seed, cfg.process)
        worst_all = max(worst_all, err)
        lines.append(f"{k},{err!r},{name}")
        print(f"{k}: max relative error {err:.3e} at {name}")
    with open(_out(cfg, "gradcheck.csv"), "w") as f:
        f.write("model,max_rel_err,worst_param\n" + "\n".join(lines) + "\n")
    if worst_all > 1e-4:
        raise ad.GradCheckError(f"gradient check failed: max relative error {worst_all:.3e} > 1e-4")


_DISPATCH = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "bayesopt": cmd_bayesopt,
    "gradcheck": cmd_gradcheck,
    "sample": cmd_sample,
}


def run(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    with open(_out(cfg, "config.json"), "w") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
    _DISPATCH[cfg.command](cfg)
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
