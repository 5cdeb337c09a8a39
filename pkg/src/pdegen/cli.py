"""Command-line entry points: gen-data, train-vae, train-gen, rollout, evaluate, plot."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig

log = logging.getLogger("pdegen")

DATA_FILES = {("InD", "train"): "train_ind.bin", ("InD", "test"): "test_ind.bin",
              ("OutD", "test"): "test_outd.bin"}


def dataset_seed(seed: int, key: int) -> int:
    """Disjoint per-file simulation seeds derived from the run seed."""
    return int(np.random.SeedSequence([seed, key]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _setup(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, seed=args.seed))
    from .pipeline import configure_runtime
    configure_runtime(cfg.experiment.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    return cfg


def _write_loss(path, trace, first_step: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for k, v in enumerate(trace):
            w.writerow([first_step + k + 1, repr(float(v))])


def cmd_gen_data(args):
    from .pde_lab import generate_dataset
    cfg = _setup(args)
    d, seed, out = cfg.data, cfg.experiment.seed, Path(args.out)
    jobs = []
    if "InD" in d.regimes:
        jobs += [("InD", "train", d.n_train, 0), ("InD", "test", d.n_test, 1)]
    if "OutD" in d.regimes:
        jobs.append(("OutD", "test", d.n_outd, 2))
    for regime, split, n, key in jobs:
        path = out / DATA_FILES[(regime, split)]
        generate_dataset(d.system, regime, n, d.batch_size, dataset_seed(seed, key), path)
        log.info("wrote %s (%d trajectories)", path, n)


def cmd_train_vae(args):
    import torch
    from .pde_lab import read_container
    from .pipeline import build_tokenizer, load_tokenizer, save_tokenizer
    from .tensor_core import ParamStore
    from .tokenizer import train_vae
    cfg = _setup(args)
    ds = read_container(args.data)
    store = None
    if args.resume:
        tok, _, meta, optim = load_tokenizer(args.resume)
        tc = cfg.vae_train
        store = ParamStore(tok, tc.weight_decay, clip_norm=tc.clip_norm)
        store.load_state_tensors(optim, int(meta["step"]))
    else:
        tok = build_tokenizer(cfg, ds, cfg.experiment.seed)
    start = store.step if store else 0
    store, trace = train_vae(ds, tok, cfg.vae_train, cfg.experiment.seed + start, store=store)
    out = Path(args.out)
    save_tokenizer(out / "vae.ckpt", tok, cfg, store)
    _write_loss(out / "vae_loss.csv", trace, start)


def cmd_train_gen(args):
    from .pde_lab import read_container
    from .pipeline import (build_generator, load_generator, load_tokenizer, save_generator,
                           tokenizer_digest, training_latents)
    from .tensor_core import ParamStore
    from .generator import train_generator
    if not args.vae:
        raise ValueError("train-gen needs a trained tokenizer checkpoint (--vae)")
    cfg = _setup(args)
    ds = read_container(args.data)
    tok, _, _, _ = load_tokenizer(args.vae)
    latents = training_latents(tok, ds, cfg.gen.patch)
    groups = np.arange(ds.n_traj) // ds.batch_size
    store = None
    if args.resume:
        gen, _, meta, optim = load_generator(args.resume, tok)
        tc = cfg.gen_train
        store = ParamStore(gen, tc.weight_decay, clip_norm=tc.clip_norm)
        store.load_state_tensors(optim, int(meta["step"]))
    else:
        gen = build_generator(cfg, tok, cfg.experiment.seed)
    start = store.step if store else 0
    store, trace = train_generator(latents, gen, cfg.gen_train, cfg.experiment.seed + start,
                                   groups=groups, store=store)
    out = Path(args.out)
    save_generator(out / "gen.ckpt", gen, tok, cfg, tokenizer_digest(tok), store)
    _write_loss(out / "gen_loss.csv", trace, start)


def _load_models(args):
    from .pipeline import load_generator, load_tokenizer, tokenizer_digest
    if not args.vae or not args.gen:
        raise ValueError("rollout needs both --vae and --gen checkpoints")
    tok, _, _, _ = load_tokenizer(args.vae)
    gen, _, meta, _ = load_generator(args.gen, tok)
    if meta.get("vae_digest") != tokenizer_digest(tok):
        raise ValueError("generator checkpoint was trained on a different tokenizer")
    return tok, gen


def evaluate_predictions(pred: np.ndarray, truth: np.ndarray, first: int, meta: dict, fair: bool):
    """pred [n, E, T, ...], truth [n, T, ...]; metrics over frames first..T-1."""
    from .eval_metrics import EnsembleForecast, EvalReport, relative_mse, step_curves
    rep = EvalReport(meta=meta)
    for i in range(pred.shape[0]):
        rel = float(np.mean([relative_mse(pred[i, e, first:], truth[i, first:])
                             for e in range(pred.shape[1])]))
        curves = None
        if pred.shape[1] >= 2:
            ens = EnsembleForecast(pred[i, :, first:], truth[i, first:], list(range(pred.shape[1])))
            curves = step_curves(ens, fair)
        rep.add(rel, curves)
    return rep


def _prediction_container(ds, idx, pred, truth):
    from .pde_lab import TrajectoryDataset
    n, E = pred.shape[:2]
    fields = np.concatenate([truth[:, None], pred], axis=1).reshape(n * (E + 1), *pred.shape[2:])
    return TrajectoryDataset(system=ds.system, regime=ds.regime, batch_size=E + 1, dt=ds.dt,
                             seed=ds.seed, grid=ds.grid, fields=fields.astype(np.float32),
                             params=[ds.params_of(int(i)) for i in idx])


def cmd_rollout(args):
    from .pde_lab import read_container, write_container
    from .pipeline import forecast, forecast_with_context
    cfg = _setup(args)
    ev = cfg.eval
    tok, gen = _load_models(args)
    ds = read_container(args.data)
    n = ds.n_traj if ev.max_trajectories <= 0 else min(ev.max_trajectories, ds.n_traj)
    idx = np.arange(n)
    seed = cfg.experiment.seed
    if ev.setting == "temporal":
        first = ev.history
        pred = forecast(tok, gen, ds, idx, ev.history, ev.horizon, seed, ev.members, ev.frac,
                        ev.decode_steps, ev.fm_steps)
    else:
        first = 1
        pred = forecast_with_context(tok, gen, ds, idx, ev.horizon, seed, ev.members, ev.frac,
                                     ev.decode_steps, ev.fm_steps)
    truth = ds.fields[idx, :pred.shape[2]]
    out = Path(args.out)
    write_container(out / "predictions.bin", _prediction_container(ds, idx, pred, truth))
    meta = {"dataset": Path(args.data).name, "regime": ds.regime, "setting": ev.setting,
            "seed": str(seed), "members": str(ev.members), "first_forecast_frame": str(first)}
    rep = evaluate_predictions(pred, truth, first, meta, ev.fair_crps)
    rep.write(out)
    log.info("mean relative MSE %.4g over %d trajectories", rep.mean_rel_mse, n)


def _read_predictions(path):
    from .pde_lab import read_container
    ds = read_container(path)
    E = ds.batch_size - 1
    if E < 1:
        raise ValueError(f"{path}: not a predictions file (needs truth plus members per trajectory)")
    f = ds.fields.reshape(ds.n_traj // ds.batch_size, ds.batch_size, *ds.fields.shape[1:])
    return ds, f[:, 1:], f[:, 0]


def cmd_evaluate(args):
    cfg = _setup(args)
    ds, pred, truth = _read_predictions(args.pred)
    first = 1 if cfg.eval.setting == "ivp" else cfg.eval.history
    meta = {"predictions": Path(args.pred).name, "regime": ds.regime, "setting": cfg.eval.setting,
            "first_forecast_frame": str(first)}
    evaluate_predictions(pred, truth, first, meta, cfg.eval.fair_crps).write(args.out)


def cmd_plot(args):
    from .plotting import plot_predictions
    cfg = _setup(args)
    ds, pred, truth = _read_predictions(args.pred)
    n = pred.shape[0] if cfg.eval.max_trajectories <= 0 else min(cfg.eval.max_trajectories, pred.shape[0])
    plot_predictions(args.out, pred[:n, 0], truth[:n], ds.spatial_dims)


COMMANDS = {
    "gen-data": (cmd_gen_data, "simulate train/test datasets"),
    "train-vae": (cmd_train_vae, "train the tokenizer"),
    "train-gen": (cmd_train_gen, "train the latent generator on a frozen tokenizer"),
    "rollout": (cmd_rollout, "forecast held-out trajectories and score them"),
    "evaluate": (cmd_evaluate, "score an existing predictions file"),
    "plot": (cmd_plot, "render predictions as grayscale heatmaps"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdegen", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="INI run configuration (defaults to the desk setup)")
        s.add_argument("--seed", type=int, help="overrides [experiment] seed")
        s.add_argument("--out", required=True, help="output directory")
        if name in ("train-vae", "train-gen", "rollout"):
            s.add_argument("--data", required=True, help="trajectory container")
        if name in ("train-vae", "train-gen"):
            s.add_argument("--resume", help="checkpoint to continue from")
        if name in ("train-gen", "rollout"):
            s.add_argument("--vae", help="tokenizer checkpoint")
        if name == "rollout":
            s.add_argument("--gen", help="generator checkpoint")
        if name in ("evaluate", "plot"):
            s.add_argument("--pred", required=True, help="predictions file written by rollout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command][0](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"pdegen {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
