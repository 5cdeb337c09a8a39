"""Training and evaluation loops for the tokenizer."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from ..pde_lab import TrajectoryDataset, subsample_indices
from ..tensor_core import LrSchedule, NonFiniteError, ParamStore, RngStream, optimizer_step
from .vae import Tokenizer, relative_mse, vae_loss

log = logging.getLogger(__name__)


@dataclass
class VaeTrainConfig:
    steps: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-3
    floor_lr: float = 1e-5
    warmup: int = 100
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    frac_min: float = 0.2
    frac_max: float = 1.0
    beta: float = 1e-4
    kl_reduction: str = "mean"
    window: int = 0                 # frames per training sample (0 = whole trajectory)


def flat_grid(ds: TrajectoryDataset) -> torch.Tensor:
    return torch.as_tensor(ds.grid.reshape(-1, ds.grid.shape[-1]), dtype=torch.float32)


def flat_fields(ds: TrajectoryDataset, idx) -> torch.Tensor:
    f = ds.fields[idx]
    return torch.as_tensor(f.reshape(f.shape[0], f.shape[1], -1, f.shape[-1]))


def subsampled_batch(grid: torch.Tensor, fields: torch.Tensor, fracs, rng: np.random.Generator):
    """Pad per-sample subsets of grid points into (coords, values, valid) tensors."""
    n = grid.shape[0]
    picks = [subsample_indices(n, float(f), rng) for f in fracs]
    m = max(len(p) for p in picks)
    B, T, _, C = fields.shape
    coords = torch.zeros(B, m, grid.shape[1])
    values = torch.zeros(B, T, m, C)
    valid = torch.zeros(B, m, dtype=torch.bool)
    for b, p in enumerate(picks):
        p = torch.as_tensor(p)
        coords[b, :len(p)] = grid[p]
        values[b, :, :len(p)] = fields[b][:, p]
        valid[b, :len(p)] = True
    return coords, values, valid


def train_vae(ds: TrajectoryDataset, model: Tokenizer, cfg: VaeTrainConfig, seed: int,
              store: Optional[ParamStore] = None,
              callback: Optional[Callable[[int, float], None]] = None):
    """Returns (store, loss trace). Each sample sees a random fraction of its grid."""
    rng = RngStream(seed)
    order_rng = rng.spawn(0).np
    frac_rng = rng.spawn(1).np
    sample_rng = rng.spawn(2)
    if store is None:
        model.set_field_stats(torch.as_tensor(ds.fields))
        store = ParamStore(model, cfg.weight_decay, clip_norm=cfg.clip_norm)
    schedule = LrSchedule(cfg.peak_lr, cfg.floor_lr, cfg.warmup, cfg.steps)
    grid = flat_grid(ds)
    n = ds.n_traj
    perm, pos = order_rng.permutation(n), 0
    trace = []
    model.train()
    while store.step < cfg.steps:
        if pos + cfg.batch_size > n:
            perm, pos = order_rng.permutation(n), 0
        idx = np.sort(perm[pos:pos + cfg.batch_size])
        pos += cfg.batch_size
        fields = flat_fields(ds, idx)
        if 0 < cfg.window < fields.shape[1]:
            starts = order_rng.integers(0, fields.shape[1] - cfg.window + 1, size=len(idx))
            fields = torch.stack([f[s:s + cfg.window] for f, s in zip(fields, starts)])
        fracs = frac_rng.uniform(cfg.frac_min, cfg.frac_max, size=len(idx))
        coords, values, valid = subsampled_batch(grid, fields, fracs, frac_rng)
        recon, enc = model(coords, values, grid[None], valid, rng=sample_rng)
        loss = vae_loss(recon, fields, enc.mean, enc.logvar, cfg.beta, cfg.kl_reduction)
        if not torch.isfinite(loss):
            raise NonFiniteError(f"VAE loss diverged at step {store.step}")
        loss.backward()
        optimizer_step(store, schedule)
        clamp_grid(model)
        trace.append(loss.item())
        if callback is not None:
            callback(store.step, trace[-1])
    model.eval()
    return store, trace


@torch.no_grad()
def clamp_grid(model: Tokenizer):
    for mod in (model.encoder, model.decoder):
        if isinstance(mod.grid, torch.nn.Parameter):
            mod.grid.clamp_(0.0, 1.0)


@torch.no_grad()
def reconstruction_errors(model: Tokenizer, ds: TrajectoryDataset, frac: float, seed: int,
                          batch_size: int = 16) -> np.ndarray:
    """Per-trajectory full-grid relative MSE when encoding from a ``frac`` subset."""
    model.eval()
    rng = np.random.default_rng(seed)
    grid = flat_grid(ds)
    errs = []
    for s in range(0, ds.n_traj, batch_size):
        idx = np.arange(s, min(s + batch_size, ds.n_traj))
        fields = flat_fields(ds, idx)
        coords, values, valid = subsampled_batch(grid, fields, [frac] * len(idx), rng)
        recon, _ = model(coords, values, grid[None], valid)
        for b in range(len(idx)):
            errs.append(float(relative_mse(recon[b:b + 1], fields[b:b + 1])))
    return np.asarray(errs)


@torch.no_grad()
def encode_dataset(model: Tokenizer, ds: TrajectoryDataset, batch_size: int = 16) -> torch.Tensor:
    """Posterior means of every trajectory on the full grid: [n, T_e, M, d]."""
    model.eval()
    grid = flat_grid(ds)
    out = []
    for s in range(0, ds.n_traj, batch_size):
        fields = flat_fields(ds, np.arange(s, min(s + batch_size, ds.n_traj)))
        enc = model.encode(grid[None].expand(fields.shape[0], -1, -1), fields)
        out.append(enc.latents("mean").tokens)
    return torch.cat(out)


@torch.no_grad()
def fit_latent_stats(model: Tokenizer, latents: torch.Tensor):
    flat = latents.reshape(-1, latents.shape[-1]).double()
    model.latent_shift.copy_(flat.mean(0).float())
    model.latent_scale.copy_(flat.std(0).clamp_min(1e-6).float())
